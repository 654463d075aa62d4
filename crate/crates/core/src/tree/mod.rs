//! Barnes-Hut octree for the short-range part of the TreePM force, and the
//! local essential tree (LET) exchanged between sites.
//!
//! The octree has a fixed geometry: the root is the unit box and children
//! split their parent at its centre. Node placement therefore depends only on
//! particle positions, never on which site holds them, which is what lets a
//! site rebuild exactly the nodes a single global tree would have from its
//! own particles plus the LETs received from its peers.

mod kernel;
mod let_tree;
mod octree;
mod walk;

use thiserror::Error;

use crate::domain::Vec3;

pub use kernel::{short_range_kernel, SplitKernel};
pub use let_tree::{extract_let, LetBody, LetNode, LetPayload};
pub use octree::{build_merged_tree, build_tree, Bounds, NodeKind, Octree, OctreeNode, MAX_DEPTH};
pub use walk::{tree_force, tree_forces, ForceParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("negative separation {0}")]
    NegativeSeparation(f64),
    #[error("particle {id} at {pos:?} lies outside the tree bounds")]
    OutOfBounds { id: u64, pos: Vec3 },
    #[error("invalid force parameter: {0}")]
    BadParameter(String),
    #[error("malformed LET payload: {0}")]
    MalformedLet(String),
}

/// Minimal particle record stored in the tree and carried in LETs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub id: u64,
    pub pos: Vec3,
    pub mass: f64,
}

impl From<&crate::domain::Particle> for Body {
    fn from(p: &crate::domain::Particle) -> Self {
        Body { id: p.id, pos: p.pos, mass: p.mass }
    }
}

/// Mass moments of a node: total mass, mass-weighted position sum and
/// particle count. Kept as sums so that contributions from several sites
/// add up to the moments of the combined node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub mass: f64,
    pub mass_pos: Vec3,
    pub count: u64,
}

impl Moments {
    pub fn add(&mut self, other: &Moments) {
        self.mass += other.mass;
        for k in 0..3 {
            self.mass_pos[k] += other.mass_pos[k];
        }
        self.count += other.count;
    }

    pub fn add_body(&mut self, b: &Body) {
        self.mass += b.mass;
        for k in 0..3 {
            self.mass_pos[k] += b.mass * b.pos[k];
        }
        self.count += 1;
    }

    pub fn com(&self) -> Vec3 {
        if self.mass > 0.0 {
            self.mass_pos.map(|s| s / self.mass)
        } else {
            [0.0; 3]
        }
    }
}
