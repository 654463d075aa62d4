use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DensityMesh, MeshError};

/// Long-range acceleration components sampled at mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceMeshes {
    pub size: usize,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub fz: Vec<f64>,
}

impl ForceMeshes {
    pub fn zeros(size: usize) -> Self {
        let cells = size * size * size;
        ForceMeshes { size, fx: vec![0.0; cells], fy: vec![0.0; cells], fz: vec![0.0; cells] }
    }
}

/// Solves for the smoothed long-range field of the whole mesh in one piece.
pub fn solve_long_range(mesh: &DensityMesh, r_split: f64) -> Result<ForceMeshes, MeshError> {
    solve_long_range_partitioned(mesh, r_split, &[0..mesh.size])
}

/// Same solve with the transforms split into groups of x-planes (and,
/// for the x pass, groups of y-rows). `partitions` must tile `0..size` in
/// order. Every 1D transform is computed identically regardless of the
/// grouping, so the result does not depend on it.
pub fn solve_long_range_partitioned(
    mesh: &DensityMesh,
    r_split: f64,
    partitions: &[Range<usize>],
) -> Result<ForceMeshes, MeshError> {
    let n = mesh.size;
    if !n.is_power_of_two() || n < 2 {
        return Err(MeshError::BadSize(n));
    }
    if mesh.values.len() != n * n * n {
        return Err(MeshError::SizeMismatch { expected: n * n * n, got: mesh.values.len() });
    }
    let mut next = 0;
    for p in partitions {
        if p.start != next || p.end < p.start {
            return Err(MeshError::SizeMismatch { expected: next, got: p.start });
        }
        next = p.end;
    }
    if next != n {
        return Err(MeshError::SizeMismatch { expected: n, got: next });
    }

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    // mass per cell -> density in units of the mean when total mass is 1
    let cell_volume_inv = (n * n * n) as f64;
    let mut rho: Vec<Complex<f64>> =
        mesh.values.iter().map(|m| Complex::new(m * cell_volume_inv, 0.0)).collect();
    fft3(&mut rho, n, &fwd, partitions);

    let wave = |i: usize| {
        let f = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
        2.0 * PI * f
    };
    let deriv = |i: usize| if i == n / 2 { 0.0 } else { wave(i) };
    let rs2 = r_split * r_split;

    let mut out = ForceMeshes::zeros(n);
    let scale = 1.0 / (n * n * n) as f64;
    for axis in 0..3 {
        let mut field: Vec<Complex<f64>> = rho
            .par_iter()
            .enumerate()
            .map(|(idx, r)| {
                let (ix, iy, iz) = (idx / (n * n), idx / n % n, idx % n);
                if ix == 0 && iy == 0 && iz == 0 {
                    return Complex::new(0.0, 0.0);
                }
                let (kx, ky, kz) = (wave(ix), wave(iy), wave(iz));
                let k2 = kx * kx + ky * ky + kz * kz;
                let green = -4.0 * PI * (-k2 * rs2).exp() / k2;
                let phi = r * green;
                let k = deriv([ix, iy, iz][axis]);
                // -i k phi
                Complex::new(k * phi.im, -k * phi.re)
            })
            .collect();
        fft3(&mut field, n, &inv, partitions);
        let dst = match axis {
            0 => &mut out.fx,
            1 => &mut out.fy,
            _ => &mut out.fz,
        };
        for (d, c) in dst.iter_mut().zip(&field) {
            *d = c.re * scale;
        }
    }
    Ok(out)
}

/// In-place unnormalised 3D transform of an x-major cube.
fn fft3(data: &mut [Complex<f64>], n: usize, fft: &Arc<dyn Fft<f64>>, partitions: &[Range<usize>]) {
    let plane = n * n;
    // z then y within each x-plane
    for part in partitions {
        data[part.start * plane..part.end * plane]
            .par_chunks_mut(plane)
            .for_each(|p| {
                fft.process(p);
                let mut col = vec![Complex::new(0.0, 0.0); n];
                for iz in 0..n {
                    for iy in 0..n {
                        col[iy] = p[iy * n + iz];
                    }
                    fft.process(&mut col);
                    for iy in 0..n {
                        p[iy * n + iz] = col[iy];
                    }
                }
            });
    }
    // x pencils, grouped by y-rows
    for part in partitions {
        let pencils: Vec<(usize, Vec<Complex<f64>>)> = (part.start * n..part.end * n)
            .into_par_iter()
            .map(|yz| {
                let mut col: Vec<Complex<f64>> = (0..n).map(|ix| data[ix * plane + yz]).collect();
                fft.process(&mut col);
                (yz, col)
            })
            .collect();
        for (yz, col) in pencils {
            for (ix, v) in col.into_iter().enumerate() {
                data[ix * plane + yz] = v;
            }
        }
    }
}
