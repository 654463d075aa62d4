use super::{Body, LetBody, LetNode, Moments, TreeError};
use crate::domain::Vec3;

/// Subdivision stops at this depth even if a node holds more than the leaf
/// capacity (coincident particles).
pub const MAX_DEPTH: u32 = 24;

pub const NO_CHILD: u32 = u32::MAX;

/// Axis-aligned cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub center: Vec3,
    pub half_width: f64,
}

impl Bounds {
    pub fn unit() -> Self {
        Bounds { center: [0.5; 3], half_width: 0.5 }
    }

    /// Half-open containment: lo <= x < hi on every axis.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| {
            p[k] >= self.center[k] - self.half_width && p[k] < self.center[k] + self.half_width
        })
    }

    #[inline]
    pub fn octant(&self, p: &Vec3) -> usize {
        (0..3).fold(0, |o, k| o | (((p[k] >= self.center[k]) as usize) << k))
    }

    #[inline]
    pub fn child(&self, octant: usize) -> Bounds {
        let h = 0.5 * self.half_width;
        let center = std::array::from_fn(|k| {
            if octant >> k & 1 == 1 {
                self.center[k] + h
            } else {
                self.center[k] - h
            }
        });
        Bounds { center, half_width: h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal,
    /// Bodies `start..start + len` of [`Octree::bodies`], sorted by id.
    Leaf { start: usize, len: usize },
    /// Aggregate received from a peer that is accepted by the opening
    /// criterion everywhere on this site; it is never opened.
    Collapsed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeNode {
    pub bounds: Bounds,
    pub depth: u32,
    pub total_mass: f64,
    /// Mass centroid.
    pub com: Vec3,
    pub count: u64,
    pub children: [u32; 8],
    pub kind: NodeKind,
}

impl OctreeNode {
    pub fn child_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != NO_CHILD)
            .map(|(o, &c)| (o, c as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Octree {
    pub nodes: Vec<OctreeNode>,
    pub bodies: Vec<Body>,
    pub leaf_capacity: usize,
    /// Mass-weighted position sums per node, parallel to `nodes`.
    mass_pos: Vec<Vec3>,
}

impl Octree {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<&OctreeNode> {
        self.nodes.first()
    }

    pub fn leaf_bodies(&self, node: &OctreeNode) -> &[Body] {
        match node.kind {
            NodeKind::Leaf { start, len } => &self.bodies[start..start + len],
            _ => &[],
        }
    }

    pub fn moments(&self, idx: usize) -> Moments {
        let n = &self.nodes[idx];
        Moments { mass: n.total_mass, mass_pos: self.mass_pos[idx], count: n.count }
    }
}

/// Builds an octree over `bodies`, which must lie inside `bounds`.
pub fn build_tree(bodies: &[Body], bounds: Bounds, leaf_capacity: usize) -> Result<Octree, TreeError> {
    build_merged_tree(bodies, &[], bounds, leaf_capacity)
}

/// Builds the tree a site walks for its own targets: its local bodies plus
/// the LET roots received from peers. With no LETs this is the plain build,
/// and the node layout matches the tree a single site holding every body
/// would build.
pub fn build_merged_tree(
    bodies: &[Body],
    lets: &[&LetNode],
    bounds: Bounds,
    leaf_capacity: usize,
) -> Result<Octree, TreeError> {
    if let Some(b) = bodies.iter().find(|b| !bounds.contains(&b.pos)) {
        return Err(TreeError::OutOfBounds { id: b.id, pos: b.pos });
    }
    let mut tree = Octree {
        nodes: Vec::new(),
        bodies: Vec::new(),
        leaf_capacity: leaf_capacity.max(1),
        mass_pos: Vec::new(),
    };
    build_node(&mut tree, bounds, 0, bodies.to_vec(), lets.to_vec())?;
    Ok(tree)
}

/// `raw` holds bodies not yet accounted for by any LET aggregate: local
/// bodies plus remote bodies released by a LET leaf at an ancestor. `lets`
/// are the peers' aggregates for exactly this node.
fn build_node(
    tree: &mut Octree,
    bounds: Bounds,
    depth: u32,
    raw: Vec<Body>,
    lets: Vec<&LetNode>,
) -> Result<Option<u32>, TreeError> {
    let mut moments = Moments::default();
    for b in &raw {
        moments.add_body(b);
    }
    for l in &lets {
        moments.add(&l.moments);
    }
    if moments.count == 0 {
        return Ok(None);
    }

    let idx = tree.nodes.len();
    tree.nodes.push(OctreeNode {
        bounds,
        depth,
        total_mass: moments.mass,
        com: moments.com(),
        count: moments.count,
        children: [NO_CHILD; 8],
        kind: NodeKind::Internal,
    });
    tree.mass_pos.push(moments.mass_pos);

    // bodies shipped in LET leaves at this node; already in `moments`
    let mut arriving = Vec::new();
    let mut collapsed = false;
    for l in &lets {
        match &l.body {
            LetBody::Collapsed => collapsed = true,
            LetBody::Particles(ps) => {
                if let Some(b) = ps.iter().find(|b| !bounds.contains(&b.pos)) {
                    return Err(TreeError::MalformedLet(format!("body {} outside its node", b.id)));
                }
                arriving.extend_from_slice(ps);
            }
            LetBody::Children(_) => {}
        }
    }

    if collapsed {
        tree.nodes[idx].kind = NodeKind::Collapsed;
        return Ok(Some(idx as u32));
    }

    if moments.count as usize <= tree.leaf_capacity || depth >= MAX_DEPTH {
        if lets.iter().any(|l| matches!(l.body, LetBody::Children(_))) {
            return Err(TreeError::MalformedLet(
                "subdivided LET node where the combined node is a leaf".into(),
            ));
        }
        let mut all = raw;
        all.extend(arriving);
        all.sort_by_key(|b| b.id);
        let start = tree.bodies.len();
        let len = all.len();
        tree.bodies.extend(all);
        tree.nodes[idx].kind = NodeKind::Leaf { start, len };
        return Ok(Some(idx as u32));
    }

    let mut child_raw: [Vec<Body>; 8] = Default::default();
    for b in raw.into_iter().chain(arriving) {
        child_raw[bounds.octant(&b.pos)].push(b);
    }
    let mut child_lets: [Vec<&LetNode>; 8] = Default::default();
    for l in &lets {
        if let LetBody::Children(cs) = &l.body {
            for (o, c) in cs {
                child_lets[*o as usize & 7].push(c);
            }
        }
    }
    for o in 0..8 {
        let raw_o = std::mem::take(&mut child_raw[o]);
        let lets_o = std::mem::take(&mut child_lets[o]);
        if let Some(c) = build_node(tree, bounds.child(o), depth + 1, raw_o, lets_o)? {
            tree.nodes[idx].children[o] = c;
        }
    }
    Ok(Some(idx as u32))
}
