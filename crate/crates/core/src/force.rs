//! Combined short-range tree and long-range mesh accelerations for a set of
//! bodies held in one place.

use crate::domain::Vec3;
use crate::mesh::{cic_assign, cic_interpolate, solve_long_range, MeshError};
use crate::tree::{build_tree, tree_forces, Body, Bounds, ForceParams, TreeError};

#[derive(Debug, thiserror::Error)]
pub enum ForceError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Tree plus mesh acceleration at every body and the tree interaction count.
pub fn treepm_forces(
    bodies: &[Body],
    mesh_size: usize,
    params: &ForceParams,
    leaf_capacity: usize,
) -> Result<(Vec<Vec3>, u64), ForceError> {
    params.validate()?;
    let density = cic_assign(bodies, mesh_size, 0..mesh_size)?;
    let field = solve_long_range(&density, params.r_split)?;
    let tree = build_tree(bodies, Bounds::unit(), leaf_capacity)?;
    let targets: Vec<Vec3> = bodies.iter().map(|b| b.pos).collect();
    let (mut acc, count) = tree_forces(&tree, &targets, params);
    for (a, t) in acc.iter_mut().zip(&targets) {
        let l = cic_interpolate(&field, t);
        for k in 0..3 {
            a[k] += l[k];
        }
    }
    Ok((acc, count))
}
