use std::f64::consts::PI;

use rayon::prelude::*;

use super::HarnessError;
use crate::domain::{min_image, Vec3};
use crate::tree::Body;

/// Largest particle count accepted by the O(N^2) periodic sum.
pub const MAX_EWALD_N: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwaldParams {
    /// Splitting parameter in inverse box lengths.
    pub alpha: f64,
    /// Real-space images with |n| <= this are summed.
    pub real_cutoff: i32,
    /// Reciprocal vectors 2 pi n with 0 < |n| <= this are summed.
    pub recip_cutoff: i32,
}

impl Default for EwaldParams {
    fn default() -> Self {
        EwaldParams { alpha: 2.0, real_cutoff: 3, recip_cutoff: 8 }
    }
}

/// Periodic accelerations in a unit box with a uniform neutralising
/// background, G = 1. Nearest-image pairs closer than half a box are
/// Plummer softened with length `eps`.
pub fn ewald_force(bodies: &[Body], eps: f64, params: &EwaldParams) -> Result<Vec<Vec3>, HarnessError> {
    if bodies.len() > MAX_EWALD_N {
        return Err(HarnessError::TooLarge { n: bodies.len(), max: MAX_EWALD_N });
    }
    if params.real_cutoff < 1 || params.recip_cutoff < 1 || !(params.alpha > 0.0) {
        return Err(HarnessError::BadArgument(format!("{params:?}")));
    }
    let alpha = params.alpha;

    let rc = params.real_cutoff;
    let mut images = Vec::new();
    for x in -rc..=rc {
        for y in -rc..=rc {
            for z in -rc..=rc {
                if x * x + y * y + z * z <= rc * rc {
                    images.push([x as f64, y as f64, z as f64]);
                }
            }
        }
    }

    // half-space of reciprocal vectors; k and -k contribute equally
    let kc = params.recip_cutoff;
    let mut kvecs = Vec::new();
    for x in 0..=kc {
        for y in -kc..=kc {
            for z in -kc..=kc {
                let first = x > 0 || (x == 0 && (y > 0 || (y == 0 && z > 0)));
                if first && x * x + y * y + z * z <= kc * kc {
                    let k = [2.0 * PI * x as f64, 2.0 * PI * y as f64, 2.0 * PI * z as f64];
                    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                    let weight = 2.0 * 4.0 * PI / k2 * (-k2 / (4.0 * alpha * alpha)).exp();
                    kvecs.push((k, weight));
                }
            }
        }
    }
    // structure factors S(k) = sum m e^{i k.x}
    let structure: Vec<(f64, f64)> = kvecs
        .par_iter()
        .map(|(k, _)| {
            bodies.iter().fold((0.0, 0.0), |(c, s), b| {
                let phase = k[0] * b.pos[0] + k[1] * b.pos[1] + k[2] * b.pos[2];
                (c + b.mass * phase.cos(), s + b.mass * phase.sin())
            })
        })
        .collect();

    let two_over_sqrt_pi = 2.0 / PI.sqrt();
    Ok(bodies
        .par_iter()
        .enumerate()
        .map(|(i, bi)| {
            let mut acc = [0.0; 3];
            for (j, bj) in bodies.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d: Vec3 = std::array::from_fn(|k| min_image(bj.pos[k] - bi.pos[k]));
                for n in &images {
                    let r: Vec3 = std::array::from_fn(|k| d[k] + n[k]);
                    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                    let rr = r2.sqrt();
                    let f = (libm::erfc(alpha * rr) + two_over_sqrt_pi * alpha * rr * (-alpha * alpha * r2).exp())
                        / (r2 * rr);
                    for k in 0..3 {
                        acc[k] += bj.mass * f * r[k];
                    }
                }
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                // only where the nearest image is unambiguous
                if eps > 0.0 && r2 < 0.25 {
                    let soft = 1.0 / (r2 + eps * eps).powf(1.5) - 1.0 / (r2 * r2.sqrt());
                    for k in 0..3 {
                        acc[k] += bj.mass * soft * d[k];
                    }
                }
            }
            for ((k, w), (c, s)) in kvecs.iter().zip(&structure) {
                // Im(S(k) e^{-i k.x_i})
                let phase = k[0] * bi.pos[0] + k[1] * bi.pos[1] + k[2] * bi.pos[2];
                let (pc, ps) = (phase.cos(), phase.sin());
                let im = s * pc - c * ps;
                for a in 0..3 {
                    acc[a] += w * k[a] * im;
                }
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<Body> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Body { id: i as u64, pos: [rng.gen(), rng.gen(), rng.gen()], mass: 1.0 / n as f64 })
            .collect()
    }

    #[test]
    fn pair_is_antisymmetric() {
        let b = vec![
            Body { id: 0, pos: [0.2, 0.3, 0.4], mass: 0.5 },
            Body { id: 1, pos: [0.6, 0.35, 0.1], mass: 0.5 },
        ];
        let a = ewald_force(&b, 0.0, &EwaldParams::default()).unwrap();
        for k in 0..3 {
            assert!((a[0][k] + a[1][k]).abs() < 1e-12 * a[0][k].abs().max(1e-3));
        }
    }

    #[test]
    fn close_pair_is_inverse_square() {
        let b = vec![
            Body { id: 0, pos: [0.5, 0.5, 0.5], mass: 0.5 },
            Body { id: 1, pos: [0.501, 0.5, 0.5], mass: 0.5 },
        ];
        let a = ewald_force(&b, 0.0, &EwaldParams::default()).unwrap();
        let newton = 0.5 / 1e-6;
        assert!((a[0][0] - newton).abs() < 1e-3 * newton, "{}", a[0][0]);
    }

    #[test]
    fn cutoffs_have_converged() {
        let b = random(64, 2);
        let lo = ewald_force(&b, 0.0, &EwaldParams::default()).unwrap();
        let hi = ewald_force(&b, 0.0, &EwaldParams { alpha: 2.0, real_cutoff: 4, recip_cutoff: 9 }).unwrap();
        for (x, y) in lo.iter().zip(&hi) {
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-6 * scale);
            }
        }
    }

    #[test]
    fn independent_of_splitting_parameter() {
        let b = random(32, 5);
        let a = ewald_force(&b, 0.0, &EwaldParams::default()).unwrap();
        let c = ewald_force(&b, 0.0, &EwaldParams { alpha: 2.6, real_cutoff: 3, recip_cutoff: 10 }).unwrap();
        for (x, y) in a.iter().zip(&c) {
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-6 * scale);
            }
        }
    }

    #[test]
    fn lattice_has_no_net_force() {
        let n = 4;
        let b: Vec<Body> = (0..64)
            .map(|i| Body {
                id: i,
                pos: [
                    ((i / 16) as f64 + 0.5) / n as f64,
                    ((i / 4 % 4) as f64 + 0.5) / n as f64,
                    ((i % 4) as f64 + 0.5) / n as f64,
                ],
                mass: 1.0 / 64.0,
            })
            .collect();
        for a in ewald_force(&b, 1e-3, &EwaldParams::default()).unwrap() {
            assert!(a.iter().all(|v| v.abs() < 1e-8), "{a:?}");
        }
    }

    #[test]
    fn too_many_particles_rejected() {
        let b = vec![Body { id: 0, pos: [0.0; 3], mass: 1.0 }; MAX_EWALD_N + 1];
        assert!(matches!(ewald_force(&b, 0.0, &EwaldParams::default()), Err(HarnessError::TooLarge { .. })));
    }
}
