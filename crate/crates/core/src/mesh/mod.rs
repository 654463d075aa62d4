//! Particle-mesh long-range force: cloud-in-cell deposit, the occupied-cells
//! codec used for inter-site mesh exchange, the spectral Poisson solve and
//! force interpolation.
//!
//! Mesh cells are cell-centred: cell `i` along an axis covers
//! `[i/n, (i+1)/n)` with its node at `(i + 0.5)/n`. Cells are stored x-major,
//! `index = (ix * n + iy) * n + iz`, so an x-slab is one contiguous range.

mod cic;
mod solve;
mod sparse;

use std::ops::Range;

use thiserror::Error;

pub use cic::{cic_assign, cic_interpolate, cic_weights};
pub use solve::{solve_long_range, solve_long_range_partitioned, ForceMeshes};
pub use sparse::{dense_wire_size, sparse_decode, sparse_encode, SparseMeshPayload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("cell index {index} out of range for mesh of {cells} cells")]
    IndexOutOfRange { index: u64, cells: usize },
    #[error("cell indices not strictly increasing at position {position}")]
    NotIncreasing { position: usize },
    #[error("truncated sparse payload: {0}")]
    Truncated(String),
    #[error("mesh size {0} must be a power of two >= 2")]
    BadSize(usize),
    #[error("non-finite position {0:?}")]
    NonFinite([f64; 3]),
}

/// Mass per cell on the full periodic mesh. `slab` is the x-range of cells
/// the producing site owns; deposits from its particles may also touch one
/// ghost plane on either side.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMesh {
    pub size: usize,
    pub slab: Range<usize>,
    pub values: Vec<f64>,
}

impl DensityMesh {
    pub fn zeros(size: usize) -> Self {
        DensityMesh { size, slab: 0..size, values: vec![0.0; size * size * size] }
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.size + iy) * self.size + iz
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Adds another mesh of the same size cell by cell.
    pub fn accumulate(&mut self, other: &DensityMesh) -> Result<(), MeshError> {
        if other.size != self.size {
            return Err(MeshError::SizeMismatch { expected: self.size, got: other.size });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a sparse payload directly, without materialising a dense mesh.
    pub fn accumulate_sparse(&mut self, payload: &SparseMeshPayload) -> Result<(), MeshError> {
        if payload.mesh_size as usize != self.size {
            return Err(MeshError::SizeMismatch {
                expected: self.size,
                got: payload.mesh_size as usize,
            });
        }
        payload.validate()?;
        for &(i, v) in &payload.cells {
            self.values[i as usize] += v;
        }
        Ok(())
    }
}

/// x-range of mesh cells whose lower edge lies in `[lo, hi)`.
pub fn slab_cells(lo: f64, hi: f64, size: usize) -> Range<usize> {
    let first = (lo * size as f64).ceil() as usize;
    let last = ((hi * size as f64).ceil() as usize).min(size);
    first.min(size)..last
}
