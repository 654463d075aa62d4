//! Flat LCDM background and the comoving kick-drift-kick update.
//!
//! Momentum convention: p = a^2 dx/dt, so dx/dt = p / a^2 and
//! dp/dt = F / a, where F is the comoving peculiar acceleration produced by
//! the gravity solvers. Over a step the drift factor is the integral of
//! dt / a^2 and the kick factor the integral of dt / a, both in internal time
//! units.

use thiserror::Error;

use crate::domain::{wrap_unit, CosmologyParams, Particle, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CosmologyError {
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScaleFactor(f64),
    #[error("redshift must exceed -1, got {0}")]
    BadRedshift(f64),
    #[error("inverted interval: a_start {a_start} > a_end {a_end}")]
    InvertedInterval { a_start: f64, a_end: f64 },
    #[error("length mismatch: {particles} particles, {accels} accelerations")]
    LengthMismatch { particles: usize, accels: usize },
    #[error("non-finite position after drift for particle {0}")]
    NonFinite(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactorState {
    pub a: f64,
    pub z: f64,
}

impl ScaleFactorState {
    pub fn from_z(z: f64) -> Result<Self, CosmologyError> {
        Ok(ScaleFactorState { a: a_of_z(z)?, z })
    }

    pub fn from_a(a: f64) -> Result<Self, CosmologyError> {
        if !(a > 0.0) {
            return Err(CosmologyError::NonPositiveScaleFactor(a));
        }
        Ok(ScaleFactorState { a, z: z_of_a(a) })
    }
}

/// H(a) / H0 for a flat universe.
pub fn hubble_rate(a: f64, cosmo: &CosmologyParams) -> Result<f64, CosmologyError> {
    if !(a > 0.0) {
        return Err(CosmologyError::NonPositiveScaleFactor(a));
    }
    Ok((cosmo.omega0 / (a * a * a) + cosmo.lambda0).sqrt())
}

pub fn a_of_z(z: f64) -> Result<f64, CosmologyError> {
    if !(z > -1.0) {
        return Err(CosmologyError::BadRedshift(z));
    }
    Ok(1.0 / (1.0 + z))
}

pub fn z_of_a(a: f64) -> f64 {
    1.0 / a - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCoefficients {
    /// Integral of dt / a^2.
    pub drift: f64,
    /// Integral of dt / a.
    pub kick: f64,
}

// 4-point Gauss-Legendre nodes and weights on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Panels per unit of ln a; at least one panel per call.
const PANELS_PER_LN_A: f64 = 64.0;

/// Drift and kick factors between two scale factors, evaluated with a
/// composite 4-point Gauss-Legendre rule in u = ln a, using
/// dt = du / H(a).
pub fn step_coefficients(
    a_start: f64,
    a_end: f64,
    cosmo: &CosmologyParams,
) -> Result<StepCoefficients, CosmologyError> {
    if !(a_start > 0.0) {
        return Err(CosmologyError::NonPositiveScaleFactor(a_start));
    }
    if a_start > a_end {
        return Err(CosmologyError::InvertedInterval { a_start, a_end });
    }
    if a_start == a_end {
        return Ok(StepCoefficients::default());
    }
    let h_int = cosmo.hubble_internal();
    let (u0, u1) = (a_start.ln(), a_end.ln());
    let panels = ((u1 - u0) * PANELS_PER_LN_A).ceil().max(1.0) as usize;
    let width = (u1 - u0) / panels as f64;
    let (mut drift, mut kick) = (0.0, 0.0);
    for panel in 0..panels {
        let mid = u0 + (panel as f64 + 0.5) * width;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
            let a = (mid + 0.5 * width * x).exp();
            let h = (cosmo.omega0 / (a * a * a) + cosmo.lambda0).sqrt();
            drift += w / (a * a * h);
            kick += w / (a * h);
        }
    }
    let scale = 0.5 * width / h_int;
    Ok(StepCoefficients { drift: drift * scale, kick: kick * scale })
}

/// Step boundaries equally spaced in ln(a), `n_steps + 1` values including
/// both ends.
pub fn log_a_schedule(a_start: f64, a_end: f64, n_steps: usize) -> Vec<f64> {
    if n_steps == 0 {
        return vec![a_start];
    }
    let (l0, l1) = (a_start.ln(), a_end.ln());
    (0..=n_steps)
        .map(|i| match i {
            0 => a_start,
            i if i == n_steps => a_end,
            i => (l0 + (l1 - l0) * i as f64 / n_steps as f64).exp(),
        })
        .collect()
}

/// Midpoint in ln(a), used to split a step's kick into two halves.
pub fn log_midpoint(a_start: f64, a_end: f64) -> f64 {
    (a_start * a_end).sqrt()
}

/// Source of step coefficients. `Static` freezes expansion (a = 1) and reads
/// the interval bounds as plain time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    Comoving(CosmologyParams),
    Static,
}

impl Integrator {
    pub fn coefficients(&self, from: f64, to: f64) -> Result<StepCoefficients, CosmologyError> {
        match self {
            Integrator::Comoving(c) => step_coefficients(from, to, c),
            Integrator::Static => {
                if from > to {
                    return Err(CosmologyError::InvertedInterval { a_start: from, a_end: to });
                }
                Ok(StepCoefficients { drift: to - from, kick: to - from })
            }
        }
    }

    pub fn midpoint(&self, from: f64, to: f64) -> f64 {
        match self {
            Integrator::Comoving(_) => log_midpoint(from, to),
            Integrator::Static => 0.5 * (from + to),
        }
    }
}

/// mom += accel * kick_coeff. Positions are untouched.
pub fn kick(
    particles: &mut [Particle],
    accels: &[Vec3],
    kick_coeff: f64,
) -> Result<(), CosmologyError> {
    if particles.len() != accels.len() {
        return Err(CosmologyError::LengthMismatch {
            particles: particles.len(),
            accels: accels.len(),
        });
    }
    for (p, acc) in particles.iter_mut().zip(accels) {
        for k in 0..3 {
            p.mom[k] += acc[k] * kick_coeff;
        }
    }
    Ok(())
}

/// pos = wrap(pos + mom * drift_coeff). Momenta are untouched.
pub fn drift(particles: &mut [Particle], drift_coeff: f64) -> Result<(), CosmologyError> {
    for p in particles.iter_mut() {
        for k in 0..3 {
            let x = p.pos[k] + p.mom[k] * drift_coeff;
            if !x.is_finite() {
                return Err(CosmologyError::NonFinite(p.id));
            }
            p.pos[k] = wrap_unit(x);
        }
    }
    Ok(())
}
