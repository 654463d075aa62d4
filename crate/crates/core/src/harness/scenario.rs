//! Named, seeded experiments at desk scale. Each produces one line per
//! assertion: `name<TAB>measured<TAB>expected<TAB>tolerance<TAB>PASS|FAIL`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ewald_force, force_errors, generate_ic, EwaldParams, HarnessError, IcKind};
use crate::balancer::{cost_spread, propose_boundaries, sample_particles, site_costs, BalanceParams, SiteLoadReport};
use crate::domain::{RunConfig, SlabDomain, StepTimings};
use crate::force::treepm_forces;
use crate::mesh::{cic_assign, dense_wire_size, slab_cells, sparse_decode, sparse_encode, SparseMeshPayload};
use crate::orchestrator::{read_timings_csv, run_simulation, Backend, IcSource, RunSummary, SimConfig};
use crate::transport::{ChannelConfig, EmuNetConfig};
use crate::tree::{Body, ForceParams};

pub const SCENARIOS: [&str; 6] = [
    "force-accuracy",
    "three-site-overhead",
    "latency-sweep",
    "sparse-mesh",
    "balancer-convergence",
    "metrics",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub measured: String,
    pub expected: String,
    pub tolerance: String,
    pub pass: bool,
}

impl Assertion {
    fn new(name: &str, measured: impl ToString, expected: impl ToString, tolerance: impl ToString, pass: bool) -> Self {
        Assertion {
            name: name.to_string(),
            measured: measured.to_string(),
            expected: expected.to_string(),
            tolerance: tolerance.to_string(),
            pass,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.name,
            self.measured,
            self.expected,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: String,
    pub assertions: Vec<Assertion>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn failures(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.pass).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.assertions.iter().map(|a| a.line() + "\n").collect()
    }
}

/// Runs a named scenario. With `out_dir` set, the report is written to
/// `<out_dir>/<name>.tsv` and simulation scenarios leave their timings
/// CSVs in subdirectories.
pub fn run_scenario(name: &str, out_dir: Option<&Path>) -> Result<ScenarioReport, HarnessError> {
    let sub = |tag: &str| out_dir.map(|d| d.join(format!("{name}-{tag}")));
    let assertions = match name {
        "force-accuracy" => force_accuracy()?,
        "three-site-overhead" => three_site_overhead(&sub)?,
        "latency-sweep" => latency_sweep(&sub)?,
        "sparse-mesh" => sparse_mesh()?,
        "balancer-convergence" => balancer_convergence()?,
        "metrics" => metrics(&sub)?,
        other => return Err(HarnessError::UnknownScenario(other.to_string())),
    };
    let report = ScenarioReport { scenario: name.to_string(), assertions };
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(format!("{name}.tsv")), report.to_tsv())?;
    }
    Ok(report)
}

/// TreePM against the Ewald sum, N = 512 uniform, mesh 64.
pub fn force_accuracy_errors(theta: f64) -> Result<(f64, u64), HarnessError> {
    let cfg = RunConfig::default();
    let bodies: Vec<Body> = generate_ic(IcKind::UniformRandom, 512, cfg.seed, 0.0)?.iter().map(Body::from).collect();
    let eps = crate::domain::CosmologyParams::default().softening_box;
    let exact = ewald_force(&bodies, eps, &EwaldParams::default())?;
    let p = ForceParams { theta, eps, r_split: cfg.r_split, r_cut: cfg.r_cut };
    let (acc, n) = treepm_forces(&bodies, cfg.mesh_size, &p, cfg.leaf_capacity).map_err(|e| HarnessError::BadArgument(e.to_string()))?;
    Ok((force_errors(&acc, &exact).rms, n))
}

fn force_accuracy() -> Result<Vec<Assertion>, HarnessError> {
    let (e5, n5) = force_accuracy_errors(0.5)?;
    let (e3, n3) = force_accuracy_errors(0.3)?;
    Ok(vec![
        Assertion::new("rms_error_theta_0.5", format!("{e5:.6}"), "<= 0.02", 0, e5 <= 0.02),
        Assertion::new("rms_error_theta_0.3", format!("{e3:.6}"), format!("< {e5:.6}"), 0, e3 < e5),
        Assertion::new("interactions_theta_0.3_vs_0.5", format!("{n3}/{n5}"), ">= 1", 0, n3 >= n5),
    ])
}

/// Desk-scale multi-site run over the emulator.
pub fn overhead_config(latency_ms: f64, n: u64, steps: usize) -> (SimConfig, EmuNetConfig) {
    let cfg = SimConfig {
        n_steps: steps,
        run: RunConfig { n_particles: n, ..RunConfig::default() },
        transport: ChannelConfig { n_streams: 8, ..ChannelConfig::default() },
        ..SimConfig::default()
    };
    let emu = EmuNetConfig { one_way_latency_ms: latency_ms, seed: 7, ..EmuNetConfig::default() };
    (cfg, emu)
}

fn run_overhead(latency_ms: f64, out: Option<PathBuf>) -> Result<Vec<StepTimings>, HarnessError> {
    let (mut cfg, emu) = overhead_config(latency_ms, 16 * 16 * 16, 3);
    cfg.output_dir = out;
    let ic = IcSource::from_config(&cfg)?;
    Ok(run_simulation(&cfg, &ic, &Backend::Emulated(emu))?.timings)
}

fn comm_fraction(rows: &[StepTimings]) -> f64 {
    let comm: f64 = rows.iter().map(|r| r.comm_s()).sum();
    let total: f64 = rows.iter().map(|r| r.total_s).sum();
    if total > 0.0 {
        comm / total
    } else {
        0.0
    }
}

fn three_site_overhead(sub: &dyn Fn(&str) -> Option<PathBuf>) -> Result<Vec<Assertion>, HarnessError> {
    let f0 = comm_fraction(&run_overhead(0.0, sub("0ms"))?);
    let f20 = comm_fraction(&run_overhead(20.0, sub("20ms"))?);
    Ok(vec![Assertion::new("comm_fraction_0ms_vs_20ms", format!("{f0:.4}"), format!("< {f20:.4}"), 0, f0 < f20)])
}

/// Mean per-step communication seconds at each latency.
pub fn latency_sweep_comm(latencies: &[f64], out: &dyn Fn(&str) -> Option<PathBuf>) -> Result<Vec<(f64, f64, [f64; 4])>, HarnessError> {
    latencies
        .iter()
        .map(|&l| {
            let rows = run_overhead(l, out(&format!("{l}ms")))?;
            let n = rows.len().max(1) as f64;
            let comm = rows.iter().map(|r| r.comm_s()).sum::<f64>() / n;
            let min_phase = |f: fn(&StepTimings) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
            let phases = [min_phase(|r| r.migrate_s), min_phase(|r| r.sample_s), min_phase(|r| r.let_s), min_phase(|r| r.mesh_s)];
            Ok((l, comm, phases))
        })
        .collect()
}

fn latency_sweep(sub: &dyn Fn(&str) -> Option<PathBuf>) -> Result<Vec<Assertion>, HarnessError> {
    let sweep = latency_sweep_comm(&[0.0, 5.0, 20.0, 50.0], sub)?;
    let mut out = Vec::new();
    for w in sweep.windows(2) {
        out.push(Assertion::new(
            &format!("comm_s_{}ms_vs_{}ms", w[0].0, w[1].0),
            format!("{:.4}", w[1].1),
            format!(">= {:.4}", w[0].1),
            0,
            w[1].1 >= w[0].1,
        ));
    }
    for (l, _, phases) in &sweep {
        let ok = phases.iter().all(|p| *p > 0.0);
        out.push(Assertion::new(&format!("phase_columns_nonzero_{l}ms"), format!("{phases:?}"), "> 0", 0, ok));
    }
    Ok(out)
}

/// Per-site sparse payload over the dense size for uniform particles in
/// `n_sites` equal slabs.
pub fn sparse_ratios(n_particles: usize, mesh: usize, n_sites: u32, seed: u64) -> Result<Vec<f64>, HarnessError> {
    let bodies: Vec<Body> = generate_ic(IcKind::UniformRandom, n_particles, seed, 0.0)?.iter().map(Body::from).collect();
    let dense = dense_wire_size(mesh) as f64;
    SlabDomain::equal_partition(n_sites)
        .iter()
        .map(|d| {
            let mine: Vec<Body> = bodies.iter().copied().filter(|b| d.contains_x(b.pos[0])).collect();
            let m = cic_assign(&mine, mesh, slab_cells(d.lo, d.hi, mesh)).map_err(|e| HarnessError::BadArgument(e.to_string()))?;
            Ok(sparse_encode(&m).wire_size() as f64 / dense)
        })
        .collect()
}

fn sparse_mesh() -> Result<Vec<Assertion>, HarnessError> {
    let ratios = sparse_ratios(32768, 32, 3, 1)?;
    let mut out: Vec<Assertion> = ratios
        .iter()
        .enumerate()
        .map(|(i, r)| Assertion::new(&format!("payload_ratio_site{i}"), format!("{r:.4}"), "[0.28, 0.39]", 0, (0.28..=0.39).contains(r)))
        .collect();
    let empty = cic_assign(&[], 32, 0..0).map_err(|e| HarnessError::BadArgument(e.to_string()))?;
    let e = sparse_encode(&empty);
    out.push(Assertion::new("empty_slab_cells", e.cells.len(), 0, 0, e.cells.is_empty()));
    let bodies: Vec<Body> = generate_ic(IcKind::UniformRandom, 4096, 2, 0.0)?.iter().map(Body::from).collect();
    let m = cic_assign(&bodies, 32, 0..32).map_err(|e| HarnessError::BadArgument(e.to_string()))?;
    let back = SparseMeshPayload::from_bytes(&sparse_encode(&m).to_bytes())
        .and_then(|p| sparse_decode(&p, 32))
        .map_err(|e| HarnessError::BadArgument(e.to_string()))?;
    let exact = back.values.iter().zip(&m.values).all(|(a, b)| a.to_bits() == b.to_bits());
    out.push(Assertion::new("round_trip_bit_exact", exact, true, 0, exact));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub spreads: Vec<f64>,
    /// Largest |boundary move| over all steps.
    pub max_move: f64,
    pub limit_held: bool,
}

/// Two sites over uniform particles where site 0's particles cost twice as
/// much; the balancer runs `steps` times from equal slabs.
pub fn two_to_one_trace(n: usize, steps: usize, move_limit: f64, seed: u64) -> Result<ConvergenceTrace, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let cfg = RunConfig::default();
    let params = BalanceParams { alpha: cfg.balance_alpha, move_limit, min_width: cfg.min_slab_width() };
    let mut domains = SlabDomain::equal_partition(2);
    let mut trace = ConvergenceTrace { spreads: Vec::new(), max_move: 0.0, limit_held: true };
    for step in 0..steps {
        let reports = domains
            .iter()
            .map(|d| {
                let mine: Vec<f64> = xs.iter().copied().filter(|x| d.contains_x(*x)).collect();
                let per = if d.site_id == 0 { 2e-6 } else { 1e-6 };
                let samples = sample_particles(&mine, 10, seed ^ step as u64)?;
                Ok(SiteLoadReport { site_id: d.site_id, force_time_s: per * mine.len() as f64, particle_count: mine.len() as u64, sample_positions: samples })
            })
            .collect::<Result<Vec<_>, crate::balancer::BalanceError>>()
            .map_err(|e| HarnessError::BadArgument(e.to_string()))?;
        trace.spreads.push(cost_spread(&site_costs(&reports, params.alpha)));
        let next = propose_boundaries(&domains, &reports, &params).map_err(|e| HarnessError::BadArgument(e.to_string()))?;
        for (a, b) in next.iter().zip(&domains) {
            let mv = (a.lo - b.lo).abs();
            trace.max_move = trace.max_move.max(mv);
            trace.limit_held &= mv <= move_limit;
        }
        domains = next;
    }
    Ok(trace)
}

fn balancer_convergence() -> Result<Vec<Assertion>, HarnessError> {
    let t = two_to_one_trace(32768, 60, 0.01, 1)?;
    let first = t.spreads.iter().position(|s| *s <= 0.05);
    Ok(vec![
        Assertion::new("max_boundary_move", format!("{:e}", t.max_move), "<= 0.01", 0, t.limit_held),
        Assertion::new(
            "steps_to_5pct_spread",
            first.map_or("never".to_string(), |f| f.to_string()),
            "< 60",
            0,
            first.is_some(),
        ),
    ])
}

/// Relative differences between the summary rates and the rates
/// recomputed from the timings CSV written by the same run.
pub fn metric_check(out: &Path) -> Result<(RunSummary, RunSummary), HarnessError> {
    let (mut cfg, emu) = overhead_config(0.0, 8 * 8 * 8, 3);
    cfg.output_dir = Some(out.to_path_buf());
    let ic = IcSource::from_config(&cfg)?;
    let result = run_simulation(&cfg, &ic, &Backend::Emulated(emu))?;
    let rows = read_timings_csv(&out.join("timings.csv"))?;
    Ok((result.summary, RunSummary::from_rows(&rows, result.summary.wall_time_s)))
}

fn metrics(sub: &dyn Fn(&str) -> Option<PathBuf>) -> Result<Vec<Assertion>, HarnessError> {
    let dir = sub("run").unwrap_or_else(|| std::env::temp_dir().join(format!("treegrid-metrics-{}", std::process::id())));
    let (summary, recomputed) = metric_check(&dir)?;
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let rs = rel(summary.sustained_interactions_per_s, recomputed.sustained_interactions_per_s);
    let rp = rel(summary.peak_interactions_per_s, recomputed.peak_interactions_per_s);
    Ok(vec![
        Assertion::new("sustained_rel_diff", format!("{rs:e}"), 0, "1e-9", rs <= 1e-9),
        Assertion::new("peak_rel_diff", format!("{rp:e}"), 0, "1e-9", rp <= 1e-9),
    ])
}
