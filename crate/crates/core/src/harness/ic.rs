use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::domain::{wrap_unit, Particle, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    UniformRandom,
    Lattice,
    LatticePerturbed,
    Plummer,
}

impl FromStr for IcKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "uniform-random" => Ok(IcKind::UniformRandom),
            "lattice" => Ok(IcKind::Lattice),
            "lattice-perturbed" => Ok(IcKind::LatticePerturbed),
            "plummer" => Ok(IcKind::Plummer),
            other => Err(HarnessError::UnknownIcKind(other.to_string())),
        }
    }
}

/// Equal-mass particles with total mass 1 and zero momenta, except for the
/// Plummer sphere which is returned in virial equilibrium (G = 1, frozen
/// expansion so momentum equals velocity).
///
/// `amplitude` is the x-displacement of the perturbed lattice (single sine
/// mode along x) and the scale radius of the Plummer sphere; other kinds
/// ignore it.
pub fn generate_ic(kind: IcKind, n: usize, seed: u64, amplitude: f64) -> Result<Vec<Particle>, HarnessError> {
    if n == 0 {
        return Err(HarnessError::BadArgument("n must be at least 1".into()));
    }
    let mass = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        IcKind::UniformRandom => Ok((0..n)
            .map(|i| Particle::new(i as u64, [rng.gen(), rng.gen(), rng.gen()], mass))
            .collect()),
        IcKind::Lattice | IcKind::LatticePerturbed => {
            let side = (n as f64).cbrt().round() as usize;
            if side * side * side != n {
                return Err(HarnessError::BadArgument(format!("lattice needs a cube number, got {n}")));
            }
            let amp = if kind == IcKind::Lattice { 0.0 } else { amplitude };
            let q = |i: usize| (i as f64 + 0.5) / side as f64;
            Ok((0..n)
                .map(|i| {
                    let (ix, iy, iz) = (i / (side * side), i / side % side, i % side);
                    let x = q(ix);
                    let x = if amp == 0.0 { x } else { wrap_unit(x + amp * (2.0 * PI * x).sin()) };
                    Particle::new(i as u64, [x, q(iy), q(iz)], mass)
                })
                .collect())
        }
        IcKind::Plummer => plummer(n, amplitude, &mut rng),
    }
}

fn plummer(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Particle>, HarnessError> {
    if !(scale > 0.0 && scale < 0.05) {
        return Err(HarnessError::BadArgument(format!("plummer scale radius {scale} must lie in (0, 0.05)")));
    }
    let mass = 1.0 / n as f64;
    let iso = |rng: &mut ChaCha8Rng, len: f64| -> Vec3 {
        let cos_t: f64 = rng.gen_range(-1.0..1.0);
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        [len * sin_t * phi.cos(), len * sin_t * phi.sin(), len * cos_t]
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.gen_range(1e-10..1.0);
        let r = scale / (x.powf(-2.0 / 3.0) - 1.0).sqrt();
        if r > 8.0 * scale {
            continue;
        }
        // speed as a fraction of the local escape speed, by rejection
        let q = loop {
            let q: f64 = rng.gen();
            let y: f64 = rng.gen_range(0.0..0.1);
            if y < q * q * (1.0 - q * q).powf(3.5) {
                break q;
            }
        };
        let v_esc = (2.0 / (r * r + scale * scale).sqrt()).sqrt();
        let pos = iso(rng, r);
        let mom = iso(rng, q * v_esc);
        out.push(Particle { id: out.len() as u64, pos, mom, mass });
    }
    let mut com = [0.0; 3];
    let mut cov = [0.0; 3];
    for p in &out {
        for k in 0..3 {
            com[k] += p.pos[k] * mass;
            cov[k] += p.mom[k] * mass;
        }
    }
    for p in &mut out {
        for k in 0..3 {
            p.pos[k] = wrap_unit(p.pos[k] - com[k] + 0.5);
            p.mom[k] -= cov[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        assert_eq!("lattice".parse::<IcKind>().unwrap(), IcKind::Lattice);
        assert!("zeldovich".parse::<IcKind>().is_err());
    }

    #[test]
    fn uniform_is_deterministic_and_normalised() {
        let a = generate_ic(IcKind::UniformRandom, 1000, 7, 0.0).unwrap();
        let b = generate_ic(IcKind::UniformRandom, 1000, 7, 0.0).unwrap();
        assert_eq!(a, b);
        let m: f64 = a.iter().map(|p| p.mass).sum();
        assert!((m - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|p| p.pos.iter().all(|x| (0.0..1.0).contains(x))));
    }

    #[test]
    fn zero_amplitude_perturbation_is_the_lattice() {
        let a = generate_ic(IcKind::Lattice, 512, 1, 0.0).unwrap();
        let b = generate_ic(IcKind::LatticePerturbed, 512, 1, 0.0).unwrap();
        assert_eq!(a, b);
        assert!(generate_ic(IcKind::Lattice, 500, 1, 0.0).is_err());
    }

    #[test]
    fn plummer_is_roughly_virial() {
        let ps = generate_ic(IcKind::Plummer, 2000, 3, 0.02).unwrap();
        let ke: f64 = ps.iter().map(|p| 0.5 * p.mass * p.mom.iter().map(|v| v * v).sum::<f64>()).sum();
        let mut pe = 0.0;
        for i in 0..ps.len() {
            for j in 0..i {
                let r2: f64 = (0..3).map(|k| (ps[i].pos[k] - ps[j].pos[k]).powi(2)).sum();
                pe -= ps[i].mass * ps[j].mass / r2.sqrt();
            }
        }
        let ratio = 2.0 * ke / -pe;
        assert!((ratio - 1.0).abs() < 0.1, "2K/|W| = {ratio}");
    }
}
