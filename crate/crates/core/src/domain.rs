//! Core value types shared by every subsystem: particles, cosmological
//! parameters, run configuration, slab domains and per-step timings.
//!
//! Internal units: G = 1, box length = 1, comoving mean density = 1.
//! Physical units only appear through [`UnitSystem`] at I/O boundaries.

use serde::Deserialize;
use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("domain list is empty")]
    Empty,
    #[error("gap in slab partition at site {site_id}: expected boundary {expected}, found {found}")]
    Gap { site_id: u32, expected: f64, found: f64 },
    #[error("overlap in slab partition at site {site_id}: expected boundary {expected}, found {found}")]
    Overlap { site_id: u32, expected: f64, found: f64 },
    #[error("slab of site {site_id} is empty or inverted: [{lo}, {hi})")]
    Degenerate { site_id: u32, lo: f64, hi: f64 },
    #[error("site ids out of order: position {index} holds site {site_id}")]
    Order { index: usize, site_id: u32 },
    #[error("non-finite coordinate {0:?}")]
    NonFinite(Vec3),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub id: u64,
    /// Comoving position in box units, each component in [0, 1).
    pub pos: Vec3,
    /// Comoving peculiar momentum, p = a^2 dx/dt.
    pub mom: Vec3,
    pub mass: f64,
}

impl Particle {
    pub fn new(id: u64, pos: Vec3, mass: f64) -> Self {
        Particle { id, pos, mom: [0.0; 3], mass }
    }
}

/// Reduces each component modulo 1 into [0, 1).
pub fn wrap_position(pos: Vec3) -> Result<Vec3, DomainError> {
    if pos.iter().any(|c| !c.is_finite()) {
        return Err(DomainError::NonFinite(pos));
    }
    Ok(pos.map(wrap_unit))
}

/// Scalar periodic wrap into [0, 1). `rem_euclid` can round up to exactly 1.0
/// for tiny negative inputs, which is folded back to 0.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Minimum-image separation along one periodic axis, in [-0.5, 0.5].
#[inline]
pub fn min_image(d: f64) -> f64 {
    d - d.round()
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct CosmologyParams {
    pub omega0: f64,
    pub lambda0: f64,
    /// km/s/Mpc
    pub h0: f64,
    /// Carried as metadata; no implemented equation uses it.
    pub sigma8: f64,
    /// Comoving box side in Mpc.
    pub box_mpc: f64,
    /// Plummer softening as a fraction of the box length.
    pub softening_box: f64,
    pub a_initial: f64,
}

impl Default for CosmologyParams {
    fn default() -> Self {
        CosmologyParams {
            omega0: 0.3,
            lambda0: 0.7,
            h0: 70.0,
            sigma8: 0.8,
            box_mpc: 30.0,
            // 175 pc in a 30 Mpc box
            softening_box: 175.0e-6 / 30.0,
            a_initial: 1.0 / 1.0026,
        }
    }
}

impl CosmologyParams {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::Config(m.to_string()));
        if !(self.omega0 > 0.0) {
            return bad("omega0 must be positive");
        }
        if !(self.lambda0 >= 0.0) {
            return bad("lambda0 must be non-negative");
        }
        if (self.omega0 + self.lambda0 - 1.0).abs() >= 1e-12 {
            return bad("omega0 + lambda0 must equal 1 (flat universe)");
        }
        if !(self.a_initial > 0.0 && self.a_initial <= 1.0) {
            return bad("a_initial must lie in (0, 1]");
        }
        if !(self.h0 > 0.0 && self.box_mpc > 0.0) {
            return bad("h0 and box_mpc must be positive");
        }
        if !(self.softening_box >= 0.0) {
            return bad("softening must be non-negative");
        }
        Ok(())
    }

    /// H0 expressed in internal time units. Follows from requiring the
    /// comoving mean matter density to be 1 with G = 1:
    /// rho_mean = 3 omega0 H0^2 / (8 pi G).
    pub fn hubble_internal(&self) -> f64 {
        (8.0 * std::f64::consts::PI / (3.0 * self.omega0)).sqrt()
    }
}

/// Conversion between internal units and (Mpc, Msun, km/s).
#[derive(Debug, Clone, Copy)]
pub struct UnitSystem {
    length_mpc: f64,
    mass_msun: f64,
    velocity_kms: f64,
}

/// Critical density today in h^2 Msun / Mpc^3.
const RHO_CRIT_H2: f64 = 2.775_366e11;

impl UnitSystem {
    pub fn new(cosmo: &CosmologyParams) -> Self {
        let h = cosmo.h0 / 100.0;
        let length_mpc = cosmo.box_mpc;
        let mass_msun = cosmo.omega0 * RHO_CRIT_H2 * h * h * length_mpc.powi(3);
        // internal time unit = hubble_internal / H0
        let velocity_kms = length_mpc * cosmo.h0 / cosmo.hubble_internal();
        UnitSystem { length_mpc, mass_msun, velocity_kms }
    }

    pub fn length_to_mpc(&self, x: f64) -> f64 {
        x * self.length_mpc
    }
    pub fn length_from_mpc(&self, x: f64) -> f64 {
        x / self.length_mpc
    }
    pub fn mass_to_msun(&self, m: f64) -> f64 {
        m * self.mass_msun
    }
    pub fn mass_from_msun(&self, m: f64) -> f64 {
        m / self.mass_msun
    }
    /// Peculiar velocity in km/s of a particle with comoving momentum `p` at
    /// scale factor `a` (v = a dx/dt = p / a).
    pub fn momentum_to_kms(&self, p: f64, a: f64) -> f64 {
        p / a * self.velocity_kms
    }
    pub fn momentum_from_kms(&self, v: f64, a: f64) -> f64 {
        v * a / self.velocity_kms
    }
}

fn default_r_split() -> f64 {
    1.25 / 64.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub n_particles: u64,
    pub mesh_size: usize,
    pub theta: f64,
    pub sampling_rate: u64,
    /// Fraction of the box length a boundary may move per step.
    pub boundary_move_limit: f64,
    pub n_sites: u32,
    pub workers_per_site: usize,
    /// Long/short force split scale in box units.
    pub r_split: f64,
    /// Short-range cutoff in box units.
    pub r_cut: f64,
    pub seed: u64,
    pub leaf_capacity: usize,
    /// Weight of force time versus particle count in the site cost.
    pub balance_alpha: f64,
    /// Minimum slab width, in mesh cells.
    pub min_slab_cells: usize,
    /// Reserved: k-space CIC deconvolution. Only `false` is implemented.
    pub cic_deconvolve: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r_split = default_r_split();
        RunConfig {
            n_particles: 32 * 32 * 32,
            mesh_size: 64,
            theta: 0.5,
            sampling_rate: 100,
            boundary_move_limit: 0.01,
            n_sites: 3,
            workers_per_site: 1,
            r_split,
            r_cut: 4.5 * r_split,
            seed: 1,
            leaf_capacity: 8,
            balance_alpha: 0.5,
            min_slab_cells: 2,
            cic_deconvolve: false,
        }
    }
}

impl RunConfig {
    /// Sets `mesh_size` and rescales the split/cutoff to their default
    /// multiples of the cell width.
    pub fn with_mesh(mut self, mesh_size: usize) -> Self {
        self.mesh_size = mesh_size;
        self.r_split = 1.25 / mesh_size as f64;
        self.r_cut = 4.5 * self.r_split;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::Config(m));
        if !(self.theta >= 0.0) {
            return bad(format!("theta must be >= 0, got {}", self.theta));
        }
        if self.sampling_rate < 1 {
            return bad("sampling_rate must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.boundary_move_limit) {
            return bad("boundary_move_limit must lie in [0, 1]".into());
        }
        if self.n_sites < 1 || self.workers_per_site < 1 {
            return bad("n_sites and workers_per_site must be >= 1".into());
        }
        if !self.mesh_size.is_power_of_two() || self.mesh_size < 2 {
            return bad(format!("mesh_size must be a power of two >= 2, got {}", self.mesh_size));
        }
        if !(self.r_split > 0.0) {
            return bad("r_split must be positive".into());
        }
        if !(self.r_cut >= 3.0 * self.r_split) {
            return bad(format!("r_cut ({}) must be >= 3 r_split ({})", self.r_cut, self.r_split));
        }
        // minimum-image distances are only unambiguous below half the box
        if !(self.r_cut < 0.5) {
            return bad(format!("r_cut must be < 0.5 box, got {}", self.r_cut));
        }
        if self.leaf_capacity < 1 {
            return bad("leaf_capacity must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.balance_alpha) {
            return bad("balance_alpha must lie in [0, 1]".into());
        }
        if self.cic_deconvolve {
            return bad("cic_deconvolve is reserved and not implemented".into());
        }
        let min_width = self.min_slab_cells as f64 / self.mesh_size as f64;
        if min_width * self.n_sites as f64 > 1.0 {
            return bad("too many sites for the minimum slab width".into());
        }
        Ok(())
    }

    pub fn min_slab_width(&self) -> f64 {
        self.min_slab_cells as f64 / self.mesh_size as f64
    }
}

/// One site's slab of the box along x: owns `lo <= x < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabDomain {
    pub site_id: u32,
    pub lo: f64,
    pub hi: f64,
}

impl SlabDomain {
    /// Equal-width partition of [0, 1) into `n` slabs.
    pub fn equal_partition(n: u32) -> Vec<SlabDomain> {
        let edge = |i: u32| if i == n { 1.0 } else { i as f64 / n as f64 };
        (0..n)
            .map(|i| SlabDomain { site_id: i, lo: edge(i), hi: edge(i + 1) })
            .collect()
    }

    #[inline]
    pub fn contains_x(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Index of the slab owning coordinate `x`. Assumes a valid partition.
pub fn owner_of(domains: &[SlabDomain], x: f64) -> usize {
    // first slab whose hi exceeds x
    let idx = domains.partition_point(|d| d.hi <= x);
    idx.min(domains.len() - 1)
}

/// Checks that the slabs are ordered by site id and tile [0, 1) exactly.
pub fn validate_domains(domains: &[SlabDomain]) -> Result<(), DomainError> {
    if domains.is_empty() {
        return Err(DomainError::Empty);
    }
    let mut expected = 0.0;
    for (index, d) in domains.iter().enumerate() {
        if d.site_id as usize != index {
            return Err(DomainError::Order { index, site_id: d.site_id });
        }
        if d.lo > expected {
            return Err(DomainError::Gap { site_id: d.site_id, expected, found: d.lo });
        }
        if d.lo < expected {
            return Err(DomainError::Overlap { site_id: d.site_id, expected, found: d.lo });
        }
        if !(d.hi > d.lo) {
            return Err(DomainError::Degenerate { site_id: d.site_id, lo: d.lo, hi: d.hi });
        }
        expected = d.hi;
    }
    match expected {
        e if e < 1.0 => Err(DomainError::Gap {
            site_id: domains.len() as u32 - 1,
            expected: 1.0,
            found: e,
        }),
        e if e > 1.0 => Err(DomainError::Overlap {
            site_id: domains.len() as u32 - 1,
            expected: 1.0,
            found: e,
        }),
        _ => Ok(()),
    }
}

/// Wall-clock breakdown of one step. The four communication columns follow
/// the phases of a step: migration, sample exchange, LET exchange, mesh
/// exchange.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub step: u64,
    pub z: f64,
    pub calc_s: f64,
    pub migrate_s: f64,
    pub sample_s: f64,
    pub let_s: f64,
    pub mesh_s: f64,
    pub total_s: f64,
    pub interactions: u64,
}

impl StepTimings {
    pub const CSV_HEADER: &'static str =
        "step,z,calc_s,migrate_s,sample_s,let_s,mesh_s,total_s,interactions";

    pub fn comm_s(&self) -> f64 {
        self.migrate_s + self.sample_s + self.let_s + self.mesh_s
    }

    pub fn to_csv_row(&self) -> String {
        // {:?} on f64 prints the shortest round-trippable form
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.step,
            self.z,
            self.calc_s,
            self.migrate_s,
            self.sample_s,
            self.let_s,
            self.mesh_s,
            self.total_s,
            self.interactions
        )
    }

    pub fn from_csv_row(line: &str) -> Option<StepTimings> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return None;
        }
        Some(StepTimings {
            step: f[0].parse().ok()?,
            z: f[1].parse().ok()?,
            calc_s: f[2].parse().ok()?,
            migrate_s: f[3].parse().ok()?,
            sample_s: f[4].parse().ok()?,
            let_s: f[5].parse().ok()?,
            mesh_s: f[6].parse().ok()?,
            total_s: f[7].parse().ok()?,
            interactions: f[8].parse().ok()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slab(site_id: u32, lo: f64, hi: f64) -> SlabDomain {
        SlabDomain { site_id, lo, hi }
    }

    #[test]
    fn halves_are_valid() {
        assert_eq!(validate_domains(&[slab(0, 0.0, 0.5), slab(1, 0.5, 1.0)]), Ok(()));
    }

    #[test]
    fn gap_is_reported_with_site_and_boundary() {
        let err = validate_domains(&[slab(0, 0.0, 0.4), slab(1, 0.5, 1.0)]).unwrap_err();
        assert_eq!(err, DomainError::Gap { site_id: 1, expected: 0.4, found: 0.5 });
    }

    #[test]
    fn overlap_and_short_tail() {
        let err = validate_domains(&[slab(0, 0.0, 0.6), slab(1, 0.5, 1.0)]).unwrap_err();
        assert!(matches!(err, DomainError::Overlap { site_id: 1, .. }));
        let err = validate_domains(&[slab(0, 0.0, 0.6), slab(1, 0.6, 0.9)]).unwrap_err();
        assert!(matches!(err, DomainError::Gap { site_id: 1, .. }));
        assert_eq!(validate_domains(&[]), Err(DomainError::Empty));
    }

    #[test]
    fn three_equal_thirds() {
        let d = SlabDomain::equal_partition(3);
        assert_eq!(validate_domains(&d), Ok(()));
        assert_eq!(d[2].hi, 1.0);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_position([0.5, 0.5, 0.5]).unwrap(), [0.5, 0.5, 0.5]);
        assert_eq!(wrap_position([1.25, -0.25, 0.0]).unwrap(), [0.25, 0.75, 0.0]);
        assert_eq!(wrap_position([1.0, 1.0, 1.0]).unwrap(), [0.0, 0.0, 0.0]);
        assert!(wrap_position([f64::NAN, 0.0, 0.0]).is_err());
        assert!(wrap_position([0.0, f64::INFINITY, 0.0]).is_err());
        // -1e-20 rem_euclid 1.0 rounds to 1.0
        assert_eq!(wrap_unit(-1e-20), 0.0);
    }

    #[test]
    fn owner_lookup_is_lo_inclusive() {
        let d = SlabDomain::equal_partition(2);
        assert_eq!(owner_of(&d, 0.0), 0);
        assert_eq!(owner_of(&d, 0.4999), 0);
        assert_eq!(owner_of(&d, 0.5), 1);
        assert_eq!(owner_of(&d, 0.9999999), 1);
    }

    #[test]
    fn table_one_cosmology_is_flat() {
        let c = CosmologyParams::default();
        c.validate().unwrap();
        let mut open = c;
        open.lambda0 = 0.6;
        assert!(open.validate().is_err());
    }

    #[test]
    fn default_config_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert!((c.r_cut / c.r_split - 4.5).abs() < 1e-12);
        let mut bad = c.clone();
        bad.r_cut = 2.0 * bad.r_split;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.mesh_size = 48;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_conversions_invert() {
        let u = UnitSystem::new(&CosmologyParams::default());
        for &x in &[0.0, 1e-6, 0.123456789, 0.999999] {
            let back = u.length_from_mpc(u.length_to_mpc(x));
            assert!((back - x).abs() <= 1e-12 * x.abs().max(1e-300));
            let back = u.mass_from_msun(u.mass_to_msun(x));
            assert!((back - x).abs() <= 1e-12 * x.abs().max(1e-300));
            let back = u.momentum_from_kms(u.momentum_to_kms(x, 0.7), 0.7);
            assert!((back - x).abs() <= 1e-12 * x.abs().max(1e-300));
        }
        // box of 30 Mpc at omega0 = 0.3, h = 0.7 holds ~1.1e15 Msun
        let m = u.mass_to_msun(1.0);
        assert!(m > 1.0e15 && m < 1.2e15, "{m}");
    }

    #[test]
    fn timings_csv_round_trip() {
        let t = StepTimings {
            step: 3,
            z: 0.0025,
            calc_s: 1.5,
            migrate_s: 0.1,
            sample_s: 0.01,
            let_s: 0.3,
            mesh_s: 0.2,
            total_s: 2.25,
            interactions: 123456789,
        };
        assert_eq!(StepTimings::from_csv_row(&t.to_csv_row()), Some(t));
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6) {
            let w = wrap_position([x, y, z]).unwrap();
            prop_assert!(w.iter().all(|c| (0.0..1.0).contains(c)));
            prop_assert_eq!(wrap_position(w).unwrap(), w);
        }
    }
}
