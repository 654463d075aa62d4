//! Short-range half of the TreePM force split.
//!
//! The long-range mesh force uses the Green's function
//! `-4 pi exp(-k^2 r_s^2) / k^2`, whose real-space counterpart is
//! `erf(r / 2 r_s) / r`. The short-range remainder of a unit point mass is
//!
//! ```text
//! S(r) = erfc(r / 2 r_s) + r / (r_s sqrt(pi)) * exp(-r^2 / 4 r_s^2)
//! a(r) = m * S(r) * dx / (r^2 + eps^2)^(3/2)
//! ```
//!
//! with Plummer softening `eps` applied to the Newtonian factor. The factor
//! `g(r) = S(r) / (r^2 + eps^2)^(3/2)` is shifted by its value at `r_cut` so
//! that it reaches zero continuously, and is exactly zero beyond.

use std::f64::consts::PI;

use super::TreeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitKernel {
    eps2: f64,
    inv_2rs: f64,
    inv_rs_sqrt_pi: f64,
    r_cut: f64,
    r_cut2: f64,
    shift: f64,
}

impl SplitKernel {
    pub fn new(eps: f64, r_split: f64, r_cut: f64) -> Self {
        let mut k = SplitKernel {
            eps2: eps * eps,
            inv_2rs: 0.5 / r_split,
            inv_rs_sqrt_pi: 1.0 / (r_split * PI.sqrt()),
            r_cut,
            r_cut2: r_cut * r_cut,
            shift: 0.0,
        };
        k.shift = k.unshifted(r_cut * r_cut);
        k
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    /// S(r) / (r^2 + eps^2)^(3/2), from the squared separation.
    #[inline]
    fn unshifted(&self, r2: f64) -> f64 {
        let r = r2.sqrt();
        let x = r * self.inv_2rs;
        let s = libm::erfc(x) + r * self.inv_rs_sqrt_pi * (-x * x).exp();
        let q = r2 + self.eps2;
        s / (q * q.sqrt())
    }

    /// Force factor from the squared separation: acceleration on a target
    /// from a source of mass `m` at displacement `dx` is `m * factor * dx`.
    #[inline]
    pub fn factor_r2(&self, r2: f64) -> f64 {
        if r2 >= self.r_cut2 {
            0.0
        } else {
            self.unshifted(r2) - self.shift
        }
    }

    #[inline]
    pub fn factor(&self, r: f64) -> f64 {
        if r >= self.r_cut {
            0.0
        } else {
            self.factor_r2(r * r)
        }
    }
}

/// Scalar short-range force factor g(r); see the module docs.
pub fn short_range_kernel(r: f64, eps: f64, r_split: f64, r_cut: f64) -> Result<f64, TreeError> {
    if !(r >= 0.0) {
        return Err(TreeError::NegativeSeparation(r));
    }
    Ok(SplitKernel::new(eps, r_split, r_cut).factor(r))
}
