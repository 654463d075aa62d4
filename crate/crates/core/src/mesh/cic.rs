use std::ops::Range;

use super::{DensityMesh, ForceMeshes, MeshError};
use crate::domain::Vec3;
use crate::tree::Body;

/// Lower cell index and upper weight along one axis.
#[inline]
fn axis_weights(x: f64, n: usize) -> (usize, f64) {
    let u = x * n as f64 - 0.5;
    let i0 = u.floor();
    let frac = u - i0;
    let i0 = (i0 as i64).rem_euclid(n as i64) as usize;
    (i0, frac)
}

/// The 8 (cell index, weight) pairs of the cloud-in-cell kernel at `pos`.
pub fn cic_weights(pos: &Vec3, n: usize) -> [(usize, f64); 8] {
    let ax: [(usize, f64); 3] = std::array::from_fn(|k| axis_weights(pos[k], n));
    std::array::from_fn(|corner| {
        let mut idx = 0usize;
        let mut w = 1.0;
        for k in 0..3 {
            let (i0, f) = ax[k];
            let (i, wk) = if corner >> (2 - k) & 1 == 1 { ((i0 + 1) % n, f) } else { (i0, 1.0 - f) };
            idx = idx * n + i;
            w *= wk;
        }
        (idx, w)
    })
}

/// Trilinear deposit of every body's mass onto a fresh mesh.
pub fn cic_assign(bodies: &[Body], size: usize, slab: Range<usize>) -> Result<DensityMesh, MeshError> {
    if !size.is_power_of_two() || size < 2 {
        return Err(MeshError::BadSize(size));
    }
    let mut mesh = DensityMesh { size, slab, values: vec![0.0; size * size * size] };
    for b in bodies {
        if b.pos.iter().any(|c| !c.is_finite()) {
            return Err(MeshError::NonFinite(b.pos));
        }
        for (idx, w) in cic_weights(&b.pos, size) {
            mesh.values[idx] += b.mass * w;
        }
    }
    Ok(mesh)
}

/// Trilinear gather with the deposit kernel.
pub fn cic_interpolate(forces: &ForceMeshes, pos: &Vec3) -> Vec3 {
    let mut acc = [0.0; 3];
    for (idx, w) in cic_weights(pos, forces.size) {
        acc[0] += w * forces.fx[idx];
        acc[1] += w * forces.fy[idx];
        acc[2] += w * forces.fz[idx];
    }
    acc
}
