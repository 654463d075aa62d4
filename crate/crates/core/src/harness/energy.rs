use super::{HarnessError, MAX_EWALD_N};
use crate::domain::{min_image, Particle};

/// Sum of m |p|^2 / 2; the peculiar kinetic energy when a = 1.
pub fn kinetic_energy(particles: &[Particle]) -> f64 {
    particles.iter().map(|p| 0.5 * p.mass * p.mom.iter().map(|v| v * v).sum::<f64>()).sum()
}

/// Pairwise Plummer-softened potential energy over nearest images, for
/// systems much smaller than the box.
pub fn potential_energy(particles: &[Particle], eps: f64) -> Result<f64, HarnessError> {
    if particles.len() > MAX_EWALD_N {
        return Err(HarnessError::TooLarge { n: particles.len(), max: MAX_EWALD_N });
    }
    let mut e = 0.0;
    for (i, a) in particles.iter().enumerate() {
        for b in &particles[i + 1..] {
            let r2: f64 = (0..3).map(|k| min_image(a.pos[k] - b.pos[k]).powi(2)).sum();
            e -= a.mass * b.mass / (r2 + eps * eps).sqrt();
        }
    }
    Ok(e)
}
