//! Local essential tree: the part of a site's octree a peer needs to compute
//! exact short-range forces for targets anywhere inside its slab.
//!
//! Every decision is made against the whole destination slab, so it holds for
//! any target the peer may hold:
//! - a node whose cube is farther than `r_cut` from the slab is dropped,
//! - a node the opening criterion accepts from every point of the slab is
//!   sent as a collapsed aggregate,
//! - otherwise a leaf ships its bodies and an internal node its children.
//!
//! Nodes carry the sender's partial moments, so the receiver can rebuild the
//! combined node moments by summation.

use super::walk::accepts;
use super::{Body, Moments, NodeKind, Octree, TreeError, MAX_DEPTH};
use crate::domain::SlabDomain;

/// Relative slack on the slab tests; keeps sender decisions conservative
/// against rounding in the receiver's per-target tests.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum LetBody {
    Collapsed,
    Particles(Vec<Body>),
    /// (octant, child) pairs in increasing octant order.
    Children(Vec<(u8, LetNode)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetNode {
    pub moments: Moments,
    pub body: LetBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LetPayload {
    pub origin: u32,
    pub destination: u32,
    pub root: Option<LetNode>,
}

impl LetPayload {
    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// (com, mass) of every collapsed aggregate.
    pub fn pseudo_particles(&self) -> Vec<([f64; 3], f64)> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let LetBody::Collapsed = n.body {
                out.push((n.moments.com(), n.moments.mass));
            }
        });
        out
    }

    pub fn leaf_particles(&self) -> Vec<Body> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let LetBody::Particles(ps) = &n.body {
                out.extend_from_slice(ps);
            }
        });
        out
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    fn visit(&self, f: &mut impl FnMut(&LetNode)) {
        fn rec(n: &LetNode, f: &mut impl FnMut(&LetNode)) {
            f(n);
            if let LetBody::Children(cs) = &n.body {
                for (_, c) in cs {
                    rec(c, f);
                }
            }
        }
        if let Some(r) = &self.root {
            rec(r, f);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.origin.to_le_bytes());
        out.extend_from_slice(&self.destination.to_le_bytes());
        match &self.root {
            None => out.push(0),
            Some(r) => {
                out.push(1);
                encode_node(r, &mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<LetPayload, TreeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let origin = r.u32()?;
        let destination = r.u32()?;
        let root = match r.u8()? {
            0 => None,
            1 => Some(decode_node(&mut r, 0)?),
            t => return Err(TreeError::MalformedLet(format!("root tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(TreeError::MalformedLet("trailing bytes".into()));
        }
        Ok(LetPayload { origin, destination, root })
    }
}

fn encode_node(n: &LetNode, out: &mut Vec<u8>) {
    out.extend_from_slice(&n.moments.mass.to_le_bytes());
    for v in n.moments.mass_pos {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&n.moments.count.to_le_bytes());
    match &n.body {
        LetBody::Collapsed => out.push(0),
        LetBody::Particles(ps) => {
            out.push(1);
            out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
            for b in ps {
                out.extend_from_slice(&b.id.to_le_bytes());
                for v in b.pos {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&b.mass.to_le_bytes());
            }
        }
        LetBody::Children(cs) => {
            out.push(2);
            out.push(cs.len() as u8);
            for (o, c) in cs {
                out.push(*o);
                encode_node(c, out);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TreeError> {
        if self.pos + n > self.buf.len() {
            return Err(TreeError::MalformedLet("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TreeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, TreeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TreeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TreeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_node(r: &mut Reader, depth: u32) -> Result<LetNode, TreeError> {
    if depth > MAX_DEPTH {
        return Err(TreeError::MalformedLet("nesting deeper than the tree".into()));
    }
    let mass = r.f64()?;
    let mass_pos = [r.f64()?, r.f64()?, r.f64()?];
    let count = r.u64()?;
    let body = match r.u8()? {
        0 => LetBody::Collapsed,
        1 => {
            let n = r.u32()? as usize;
            let mut ps = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let id = r.u64()?;
                let pos = [r.f64()?, r.f64()?, r.f64()?];
                let mass = r.f64()?;
                ps.push(Body { id, pos, mass });
            }
            LetBody::Particles(ps)
        }
        2 => {
            let n = r.u8()? as usize;
            let mut cs = Vec::with_capacity(n);
            let mut last = None;
            for _ in 0..n {
                let o = r.u8()?;
                if o > 7 || last.is_some_and(|l| o <= l) {
                    return Err(TreeError::MalformedLet(format!("bad octant {o}")));
                }
                last = Some(o);
                cs.push((o, decode_node(r, depth + 1)?));
            }
            LetBody::Children(cs)
        }
        t => return Err(TreeError::MalformedLet(format!("node tag {t}"))),
    };
    Ok(LetNode { moments: Moments { mass, mass_pos, count }, body })
}

/// Periodic distance along x between [a_lo, a_hi] and [b_lo, b_hi].
fn interval_distance(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|s| {
            let gap = (b_lo + s - a_hi).max(a_lo - (b_hi + s));
            gap.max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Extracts the LET that site `origin` sends to the owner of `remote`.
pub fn extract_let(
    tree: &Octree,
    origin: u32,
    remote: &SlabDomain,
    theta: f64,
    r_cut: f64,
) -> LetPayload {
    let root = if tree.is_empty() {
        None
    } else {
        extract_node(tree, 0, remote, theta, r_cut)
    };
    LetPayload { origin, destination: remote.site_id, root }
}

fn extract_node(
    tree: &Octree,
    idx: usize,
    slab: &SlabDomain,
    theta: f64,
    r_cut: f64,
) -> Option<LetNode> {
    let node = &tree.nodes[idx];
    let (c, h) = (node.bounds.center[0], node.bounds.half_width);
    let cube_gap = interval_distance(c - h, c + h, slab.lo, slab.hi);
    if cube_gap >= r_cut * (1.0 + SLACK) {
        return None;
    }
    let moments = tree.moments(idx);
    // nearest point of the slab to the node centre shares its y and z
    let centre_gap = interval_distance(c, c, slab.lo, slab.hi) * (1.0 - SLACK);
    if accepts(h, centre_gap * centre_gap, theta) {
        return Some(LetNode { moments, body: LetBody::Collapsed });
    }
    let body = match node.kind {
        NodeKind::Leaf { .. } => LetBody::Particles(tree.leaf_bodies(node).to_vec()),
        NodeKind::Collapsed => LetBody::Collapsed,
        NodeKind::Internal => {
            let children: Vec<(u8, LetNode)> = node
                .child_indices()
                .filter_map(|(o, ci)| extract_node(tree, ci, slab, theta, r_cut).map(|n| (o as u8, n)))
                .collect();
            // every descendant is out of reach, so no remote target opens or uses it
            if children.is_empty() {
                return None;
            }
            LetBody::Children(children)
        }
    };
    Some(LetNode { moments, body })
}
