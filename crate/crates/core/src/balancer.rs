//! Slab load balancing from sampled particle positions: per-site cost from
//! force time and particle count, and boundary proposals limited by a fixed
//! move per step.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{validate_domains, DomainError, SlabDomain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("sampling rate must be at least 1")]
    ZeroSamplingRate,
    #[error("{reports} reports for {domains} domains")]
    ReportCount { reports: usize, domains: usize },
    #[error("report {index} is for site {site_id}")]
    ReportOrder { index: usize, site_id: u32 },
    #[error("bad balance parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteLoadReport {
    pub site_id: u32,
    pub force_time_s: f64,
    pub particle_count: u64,
    /// x-coordinates of the sampled particles.
    pub sample_positions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceParams {
    /// Weight of force time against particle count in the cost.
    pub alpha: f64,
    /// Largest boundary displacement per step, box units.
    pub move_limit: f64,
    /// Smallest slab width, box units.
    pub min_width: f64,
}

/// Number of samples a site with `n` particles contributes.
pub fn sample_size(n: usize, sampling_rate: u64) -> usize {
    if n == 0 {
        0
    } else {
        (n / sampling_rate as usize).max(1)
    }
}

/// Uniform random subset of `xs` without replacement, in ascending index
/// order, deterministic for a fixed seed.
pub fn sample_particles(xs: &[f64], sampling_rate: u64, seed: u64) -> Result<Vec<f64>, BalanceError> {
    if sampling_rate == 0 {
        return Err(BalanceError::ZeroSamplingRate);
    }
    let k = sample_size(xs.len(), sampling_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, xs.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| xs[i]).collect())
}

/// Means over all sites used to normalise each site's cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTotals {
    pub mean_force_time: f64,
    pub mean_particle_count: f64,
}

impl CostTotals {
    pub fn from_reports(reports: &[SiteLoadReport]) -> Self {
        let n = reports.len().max(1) as f64;
        CostTotals {
            mean_force_time: reports.iter().map(|r| r.force_time_s).sum::<f64>() / n,
            mean_particle_count: reports.iter().map(|r| r.particle_count as f64).sum::<f64>() / n,
        }
    }
}

/// `alpha * t / mean(t) + (1 - alpha) * n / mean(n)`; a term whose mean is
/// zero contributes as if the site were average.
pub fn site_cost(report: &SiteLoadReport, totals: &CostTotals, alpha: f64) -> f64 {
    let ratio = |v: f64, mean: f64| if mean > 0.0 { v / mean } else { 1.0 };
    alpha * ratio(report.force_time_s, totals.mean_force_time)
        + (1.0 - alpha) * ratio(report.particle_count as f64, totals.mean_particle_count)
}

pub fn site_costs(reports: &[SiteLoadReport], alpha: f64) -> Vec<f64> {
    let totals = CostTotals::from_reports(reports);
    reports.iter().map(|r| site_cost(r, &totals, alpha)).collect()
}

/// (max - min) / mean of the costs.
pub fn cost_spread(costs: &[f64]) -> f64 {
    if costs.is_empty() {
        return 0.0;
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let (lo, hi) = costs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(*c), h.max(*c)));
    if mean > 0.0 {
        (hi - lo) / mean
    } else {
        0.0
    }
}

/// New slab boundaries. Each site's target share of the sampled particle
/// mass is its current share divided by its cost, normalised; equal costs
/// are therefore a fixed point. Targets are located on the merged sample
/// distribution (each sample weighted by its site's particles per sample),
/// then every interior boundary moves toward its target by at most
/// `move_limit` and stays far enough from its neighbours that every slab
/// keeps `min_width`.
pub fn propose_boundaries(
    domains: &[SlabDomain],
    reports: &[SiteLoadReport],
    params: &BalanceParams,
) -> Result<Vec<SlabDomain>, BalanceError> {
    validate_domains(domains)?;
    if reports.len() != domains.len() {
        return Err(BalanceError::ReportCount { reports: reports.len(), domains: domains.len() });
    }
    if let Some((index, r)) = reports.iter().enumerate().find(|(i, r)| r.site_id as usize != *i) {
        return Err(BalanceError::ReportOrder { index, site_id: r.site_id });
    }
    if !(params.move_limit >= 0.0) || !(params.min_width >= 0.0) || !(0.0..=1.0).contains(&params.alpha) {
        return Err(BalanceError::BadParameter(format!("{params:?}")));
    }
    let s = domains.len();
    let total: u64 = reports.iter().map(|r| r.particle_count).sum();
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for r in reports {
        if r.sample_positions.is_empty() {
            continue;
        }
        let w = r.particle_count as f64 / r.sample_positions.len() as f64;
        samples.extend(r.sample_positions.iter().map(|x| (*x, w)));
    }
    if s == 1 || total == 0 || samples.is_empty() {
        return Ok(domains.to_vec());
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mass: f64 = samples.iter().map(|(_, w)| w).sum();

    let costs = site_costs(reports, params.alpha);
    let raw: Vec<f64> = reports
        .iter()
        .zip(&costs)
        .map(|(r, c)| (r.particle_count as f64 / total as f64) / c.max(1e-12))
        .collect();
    let norm: f64 = raw.iter().sum();

    let mut edges: Vec<f64> = domains.iter().map(|d| d.lo).collect();
    edges.push(1.0);
    let mut new_edges = edges.clone();
    let (mut cumulative, mut current) = (0.0, 0.0);
    for k in 1..s {
        cumulative += raw[k - 1] / norm;
        current += reports[k - 1].particle_count as f64 / total as f64;
        let old = edges[k];
        // shift by the quantile difference so sampling noise cancels when
        // the target share equals the current one
        let target = old + weighted_quantile(&samples, cumulative * mass) - weighted_quantile(&samples, current * mass);
        let lo = (old - params.move_limit).max(new_edges[k - 1] + params.min_width);
        let hi = (old + params.move_limit).min(1.0 - (s - k) as f64 * params.min_width);
        let mut new = if lo <= hi { target.clamp(lo, hi) } else { old };
        // rounding in old +/- limit may overshoot by an ulp
        while new - old > params.move_limit {
            new = new.next_down();
        }
        while old - new > params.move_limit {
            new = new.next_up();
        }
        new_edges[k] = new;
    }
    Ok((0..s)
        .map(|i| SlabDomain { site_id: i as u32, lo: new_edges[i], hi: new_edges[i + 1] })
        .collect())
}

/// Position where the cumulative sample weight reaches `w`, interpolating
/// linearly between neighbouring samples (and the box edges).
fn weighted_quantile(samples: &[(f64, f64)], w: f64) -> f64 {
    let mut acc = 0.0;
    let mut prev_x = 0.0;
    for &(x, wt) in samples {
        if acc + wt >= w {
            let f = if wt > 0.0 { (w - acc) / wt } else { 1.0 };
            return prev_x + f * (x - prev_x);
        }
        acc += wt;
        prev_x = x;
    }
    prev_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn report(site_id: u32, t: f64, n: u64, xs: Vec<f64>) -> SiteLoadReport {
        SiteLoadReport { site_id, force_time_s: t, particle_count: n, sample_positions: xs }
    }

    fn params(limit: f64) -> BalanceParams {
        BalanceParams { alpha: 0.5, move_limit: limit, min_width: 2.0 / 64.0 }
    }

    fn grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
        (0..k).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / k as f64).collect()
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_size(20_000, 20_000), 1);
        assert_eq!(sample_size(1_000_000, 5_000), 200);
        assert_eq!(sample_size(10, 100), 1);
        assert_eq!(sample_size(0, 100), 0);
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let a = sample_particles(&xs, 10, 4).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, sample_particles(&xs, 10, 4).unwrap());
        assert!(sample_particles(&xs, 0, 4).is_err());
        assert!(sample_particles(&[], 10, 4).unwrap().is_empty());
    }

    #[test]
    fn cost_formula() {
        let same = vec![report(0, 1.0, 10, vec![]), report(1, 1.0, 10, vec![])];
        assert_eq!(site_costs(&same, 0.5), vec![1.0, 1.0]);
        let totals = CostTotals { mean_force_time: 1.0, mean_particle_count: 10.0 };
        assert_eq!(site_cost(&report(0, 2.0, 10, vec![]), &totals, 1.0), 2.0);
        assert_eq!(site_cost(&report(0, 2.0, 10, vec![]), &totals, 0.5), 1.5);
        let zeros = vec![report(0, 0.0, 0, vec![]), report(1, 0.0, 0, vec![])];
        assert_eq!(site_costs(&zeros, 0.5), vec![1.0, 1.0]);
    }

    #[test]
    fn balanced_input_is_a_fixed_point() {
        let d = SlabDomain::equal_partition(2);
        let r = vec![report(0, 1.0, 500, grid(0.0, 0.5, 500)), report(1, 1.0, 500, grid(0.5, 1.0, 500))];
        let out = propose_boundaries(&d, &r, &params(0.01)).unwrap();
        assert_eq!(out[0].hi, 0.5);
    }

    #[test]
    fn zero_limit_freezes_boundaries() {
        let d = SlabDomain::equal_partition(3);
        let r = vec![
            report(0, 9.0, 100, grid(0.0, 0.33, 100)),
            report(1, 1.0, 100, grid(0.34, 0.66, 100)),
            report(2, 1.0, 100, grid(0.67, 1.0, 100)),
        ];
        assert_eq!(propose_boundaries(&d, &r, &params(0.0)).unwrap(), d);
    }

    #[test]
    fn costly_site_loses_exactly_the_limit() {
        let d = SlabDomain::equal_partition(2);
        // site 0 twice as slow for the same particle count: with alpha 0.5
        // the costs are 7/6 and 5/6
        let r = vec![report(0, 2.0, 500, grid(0.0, 0.5, 500)), report(1, 1.0, 500, grid(0.5, 1.0, 500))];
        // unclamped target share: (6/7) / (6/7 + 6/5) = 5/12
        let out = propose_boundaries(&d, &r, &params(0.01)).unwrap();
        assert!((out[0].hi - 0.49).abs() < 1e-15, "{}", out[0].hi);
        let free = propose_boundaries(&d, &r, &params(1.0)).unwrap();
        assert!((free[0].hi - 5.0 / 12.0).abs() < 2e-3, "{}", free[0].hi);
    }

    #[test]
    fn empty_samples_leave_domains() {
        let d = SlabDomain::equal_partition(2);
        let r = vec![report(0, 1.0, 0, vec![]), report(1, 5.0, 0, vec![])];
        assert_eq!(propose_boundaries(&d, &r, &params(0.1)).unwrap(), d);
    }

    /// Two sites on uniform particles, site 0's particles costing twice as
    /// much to integrate. Equal costs need x^2 + 2x - 1 = 0.
    #[test]
    fn two_to_one_converges_to_equal_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..32768).map(|_| rng.gen()).collect();
        let mut d = SlabDomain::equal_partition(2);
        let p = params(0.01);
        let mut spreads = Vec::new();
        for step in 0..60 {
            let reports: Vec<SiteLoadReport> = d
                .iter()
                .map(|s| {
                    let mine: Vec<f64> = xs.iter().copied().filter(|x| s.contains_x(*x)).collect();
                    let per = if s.site_id == 0 { 2e-6 } else { 1e-6 };
                    let samples = sample_particles(&mine, 10, step).unwrap();
                    report(s.site_id, per * mine.len() as f64, mine.len() as u64, samples)
                })
                .collect();
            spreads.push(cost_spread(&site_costs(&reports, p.alpha)));
            let next = propose_boundaries(&d, &reports, &p).unwrap();
            assert!((next[0].hi - d[0].hi).abs() <= p.move_limit);
            d = next;
        }
        let first_ok = spreads.iter().position(|s| *s <= 0.05).expect("never converged");
        assert!(first_ok < 60);
        for w in spreads[..=first_ok].windows(2) {
            assert!(w[1] < w[0], "{spreads:?}");
        }
        assert!(spreads[first_ok..].iter().all(|s| *s <= 0.05), "{spreads:?}");
        assert!((d[0].hi - (2f64.sqrt() - 1.0)).abs() < 0.02, "{}", d[0].hi);
    }

    proptest! {
        #[test]
        fn moves_never_exceed_limit(
            cuts in proptest::collection::vec(0.05f64..0.95, 3),
            times in proptest::collection::vec(0.0f64..10.0, 4),
            counts in proptest::collection::vec(0u64..5000, 4),
            limit in 0.0f64..0.2,
            seed in any::<u64>(),
        ) {
            let mut c = cuts.clone();
            c.sort_by(|a, b| a.total_cmp(b));
            let mut edges = vec![0.0];
            for x in c {
                let last = *edges.last().unwrap();
                edges.push(if x - last < 0.04 { last + 0.04 } else { x });
            }
            edges.push(1.0);
            prop_assume!(edges[4] - edges[3] >= 0.04);
            let d: Vec<SlabDomain> = (0..4).map(|i| SlabDomain { site_id: i as u32, lo: edges[i], hi: edges[i + 1] }).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<SiteLoadReport> = (0..4).map(|i| {
                let xs: Vec<f64> = (0..counts[i] / 50).map(|_| rng.gen_range(edges[i]..edges[i + 1])).collect();
                report(i as u32, times[i], counts[i], xs)
            }).collect();
            let p = BalanceParams { alpha: 0.5, move_limit: limit, min_width: 0.03 };
            let out = propose_boundaries(&d, &r, &p).unwrap();
            validate_domains(&out).unwrap();
            for (a, b) in out.iter().zip(&d) {
                prop_assert!((a.lo - b.lo).abs() <= limit);
                prop_assert!(a.hi - a.lo >= 0.03 - 1e-15);
            }
        }
    }
}
