use rayon::prelude::*;

use super::{NodeKind, Octree, SplitKernel, TreeError};
use crate::domain::{min_image, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceParams {
    pub theta: f64,
    pub eps: f64,
    pub r_split: f64,
    pub r_cut: f64,
}

impl ForceParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.theta >= 0.0) {
            return Err(TreeError::BadParameter(format!("theta {}", self.theta)));
        }
        if !(self.eps >= 0.0 && self.r_split > 0.0 && self.r_cut > 0.0) {
            return Err(TreeError::BadParameter("eps, r_split and r_cut".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> SplitKernel {
        SplitKernel::new(self.eps, self.r_split, self.r_cut)
    }
}

/// Squared periodic distance from `p` to the nearest point of a cube.
#[inline]
pub(crate) fn cube_distance2(center: &Vec3, half: f64, p: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = min_image(center[k] - p[k]).abs() - half;
        if d > 0.0 {
            d2 += d * d;
        }
    }
    d2
}

/// Opening criterion: a node of width `2 * half` whose centre lies at squared
/// distance `d2` is used as one pseudo-particle when width / d < theta.
/// Equality opens the node.
#[inline]
pub(crate) fn accepts(half: f64, d2: f64, theta: f64) -> bool {
    let w = 2.0 * half;
    w * w < theta * theta * d2
}

/// Short-range acceleration at `target` and the number of pairwise
/// interactions evaluated (pseudo-particles plus individual bodies).
pub fn tree_force(tree: &Octree, target: Vec3, params: &ForceParams) -> (Vec3, u64) {
    walk(tree, &target, params, &params.kernel())
}

fn walk(tree: &Octree, target: &Vec3, params: &ForceParams, kernel: &SplitKernel) -> (Vec3, u64) {
    let mut acc = [0.0; 3];
    let mut count = 0u64;
    if tree.is_empty() {
        return (acc, 0);
    }
    let r_cut2 = params.r_cut * params.r_cut;
    let add = |src: &Vec3, mass: f64, acc: &mut Vec3| -> bool {
        let d: Vec3 = std::array::from_fn(|k| min_image(src[k] - target[k]));
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if r2 == 0.0 {
            return false;
        }
        let f = mass * kernel.factor_r2(r2);
        for k in 0..3 {
            acc[k] += f * d[k];
        }
        true
    };

    let mut stack = vec![0usize];
    while let Some(idx) = stack.pop() {
        let node = &tree.nodes[idx];
        let half = node.bounds.half_width;
        if cube_distance2(&node.bounds.center, half, target) >= r_cut2 {
            continue;
        }
        let dc: Vec3 = std::array::from_fn(|k| min_image(node.bounds.center[k] - target[k]));
        let d2 = dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2];
        if accepts(half, d2, params.theta) || node.kind == NodeKind::Collapsed {
            if add(&node.com, node.total_mass, &mut acc) {
                count += 1;
            }
            continue;
        }
        match node.kind {
            NodeKind::Leaf { .. } => {
                for b in tree.leaf_bodies(node) {
                    if add(&b.pos, b.mass, &mut acc) {
                        count += 1;
                    }
                }
            }
            NodeKind::Internal => {
                // pushed in reverse so children are visited in octant order
                for c in node.children.iter().rev() {
                    if *c != super::octree::NO_CHILD {
                        stack.push(*c as usize);
                    }
                }
            }
            NodeKind::Collapsed => unreachable!(),
        }
    }
    (acc, count)
}

/// Accelerations for many targets, parallel over targets on the current
/// rayon pool. Results do not depend on the number of workers.
pub fn tree_forces(tree: &Octree, targets: &[Vec3], params: &ForceParams) -> (Vec<Vec3>, u64) {
    let kernel = params.kernel();
    let per: Vec<(Vec3, u64)> = targets
        .par_iter()
        .with_min_len(64)
        .map(|t| walk(tree, t, params, &kernel))
        .collect();
    let total = per.iter().map(|(_, c)| c).sum();
    (per.into_iter().map(|(a, _)| a).collect(), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, Body, Bounds, OctreeNode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(theta: f64) -> ForceParams {
        let r_split = 1.25 / 16.0;
        ForceParams { theta, eps: 1e-3, r_split, r_cut: 4.5 * r_split }
    }

    fn random_bodies(n: usize, seed: u64) -> Vec<Body> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Body {
                id: i as u64,
                pos: [rng.gen(), rng.gen(), rng.gen()],
                mass: 1.0 / n as f64,
            })
            .collect()
    }

    fn direct(bodies: &[Body], t: &Vec3, p: &ForceParams) -> Vec3 {
        let k = p.kernel();
        let mut acc = [0.0; 3];
        for b in bodies {
            let d: Vec3 = std::array::from_fn(|i| min_image(b.pos[i] - t[i]));
            let r2: f64 = d.iter().map(|x| x * x).sum();
            if r2 == 0.0 {
                continue;
            }
            let f = b.mass * k.factor_r2(r2);
            for i in 0..3 {
                acc[i] += f * d[i];
            }
        }
        acc
    }

    fn norm(v: &Vec3) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn theta_zero_is_direct_summation() {
        let bodies = random_bodies(600, 1);
        let p = params(0.0);
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        for b in bodies.iter().take(50) {
            let (a, _) = tree_force(&tree, b.pos, &p);
            let d = direct(&bodies, &b.pos, &p);
            let diff: Vec3 = std::array::from_fn(|k| a[k] - d[k]);
            assert!(norm(&diff) <= 1e-12 * norm(&d).max(1e-300), "{a:?} vs {d:?}");
        }
    }

    #[test]
    fn lattice_point_feels_no_force() {
        let n = 8;
        let bodies: Vec<Body> = (0..n * n * n)
            .map(|i| Body {
                id: i as u64,
                pos: [
                    ((i / (n * n)) as f64 + 0.5) / n as f64,
                    ((i / n % n) as f64 + 0.5) / n as f64,
                    ((i % n) as f64 + 0.5) / n as f64,
                ],
                mass: 1.0 / (n * n * n) as f64,
            })
            .collect();
        let mut p = params(0.5);
        p.r_split = 0.05;
        p.r_cut = 0.3;
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        for b in bodies.iter().step_by(37) {
            let (a, _) = tree_force(&tree, b.pos, &p);
            assert!(norm(&a) < 1e-10, "{a:?}");
        }
    }

    #[test]
    fn smaller_theta_is_more_accurate() {
        let bodies = random_bodies(512, 5);
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        let mut p = params(0.0);
        p.r_split = 0.06;
        p.r_cut = 0.3;
        let rms = |theta: f64| {
            let q = ForceParams { theta, ..p };
            let (mut num, mut den) = (0.0, 0.0);
            for b in &bodies {
                let exact = tree_force(&tree, b.pos, &p).0;
                let approx = tree_force(&tree, b.pos, &q).0;
                num += (0..3).map(|k| (approx[k] - exact[k]).powi(2)).sum::<f64>();
                den += exact.iter().map(|x| x * x).sum::<f64>();
            }
            (num / den).sqrt()
        };
        let (e3, e5) = (rms(0.3), rms(0.5));
        assert!(e3 < e5, "theta 0.3: {e3}, theta 0.5: {e5}");
        assert!(e5 > 0.0);
    }

    /// Recursive reference walk that only counts interactions.
    fn reference_count(tree: &Octree, node: &OctreeNode, t: &Vec3, p: &ForceParams) -> u64 {
        let h = node.bounds.half_width;
        let mut cd2 = 0.0;
        for k in 0..3 {
            let d = (min_image(node.bounds.center[k] - t[k])).abs() - h;
            if d > 0.0 {
                cd2 += d * d;
            }
        }
        if cd2.sqrt() >= p.r_cut {
            return 0;
        }
        let d: f64 = (0..3)
            .map(|k| min_image(node.bounds.center[k] - t[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        if 2.0 * h < p.theta * d {
            return 1;
        }
        match node.kind {
            NodeKind::Leaf { .. } => tree.leaf_bodies(node).iter().filter(|b| b.pos != *t).count() as u64,
            _ => node
                .child_indices()
                .map(|(_, c)| reference_count(tree, &tree.nodes[c], t, p))
                .sum(),
        }
    }

    #[test]
    fn interaction_count_matches_reference_walk() {
        let bodies = random_bodies(256, 11);
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        let mut p = params(0.5);
        p.r_split = 0.04;
        p.r_cut = 0.18;
        for b in &bodies {
            let (_, c) = tree_force(&tree, b.pos, &p);
            assert_eq!(c, reference_count(&tree, &tree.nodes[0], &b.pos, &p));
        }
    }

    #[test]
    fn pair_forces_are_antisymmetric() {
        let bodies = vec![
            Body { id: 0, pos: [0.1, 0.2, 0.3], mass: 0.7 },
            Body { id: 1, pos: [0.15, 0.22, 0.27], mass: 0.7 },
        ];
        let p = ForceParams { theta: 0.0, eps: 1e-2, r_split: 0.2, r_cut: 2.0 };
        // the walk itself needs r_cut < 0.5 for minimum image; compare kernels
        let k = p.kernel();
        let d: Vec3 = std::array::from_fn(|i| bodies[1].pos[i] - bodies[0].pos[i]);
        let r2: f64 = d.iter().map(|x| x * x).sum();
        let f12: Vec3 = d.map(|x| bodies[1].mass * k.factor_r2(r2) * x);
        let f21: Vec3 = d.map(|x| -bodies[0].mass * k.factor_r2(r2) * x);
        for i in 0..3 {
            assert!((f12[i] + f21[i]).abs() <= 1e-12 * f12[i].abs());
        }
        let q = ForceParams { r_cut: 0.45, ..p };
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        let (a0, _) = tree_force(&tree, bodies[0].pos, &q);
        let (a1, _) = tree_force(&tree, bodies[1].pos, &q);
        for i in 0..3 {
            assert!((a0[i] + a1[i]).abs() <= 1e-12 * a0[i].abs());
        }
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let bodies = random_bodies(2000, 2);
        let p = params(0.5);
        let tree = build_tree(&bodies, Bounds::unit(), 8).unwrap();
        let targets: Vec<Vec3> = bodies.iter().map(|b| b.pos).collect();
        let (many, count) = tree_forces(&tree, &targets, &p);
        let mut total = 0;
        for (t, a) in targets.iter().zip(&many) {
            let (one, c) = tree_force(&tree, *t, &p);
            assert_eq!(&one, a);
            total += c;
        }
        assert_eq!(total, count);
    }
}
