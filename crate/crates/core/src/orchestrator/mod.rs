//! Multi-site driver: configuration, site start-up over the emulated or
//! TCP backend, the step loop, timings and snapshot output.

mod site;
mod snapshot;
mod timings;
pub mod wire;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;
use thiserror::Error;

pub use site::SiteRuntime;
pub use snapshot::{read_snapshot, write_snapshot, SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use timings::{merge_site_timings, read_timings_csv, write_timings_csv, RunSummary, TimingsLog};
pub use wire::{Phase, WireError};

use crate::balancer::BalanceError;
use crate::cosmology::{a_of_z, log_a_schedule, CosmologyError, Integrator};
use crate::domain::{CosmologyParams, DomainError, Particle, RunConfig, SlabDomain, StepTimings};
use crate::harness::{generate_ic, IcKind};
use crate::mesh::MeshError;
use crate::transport::{tcp_connect, tcp_listen, Channel, ChannelConfig, EmuNetConfig, EmuNetwork, TransportError};
use crate::tree::TreeError;

#[derive(Debug, Error)]
pub enum PhaseFault {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Cosmology(#[from] CosmologyError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0}")]
    Sync(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{phase}: {fault}")]
    Phase {
        phase: &'static str,
        #[source]
        fault: PhaseFault,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("initial conditions: {0}")]
    InitialConditions(String),
    #[error("startup: {0}")]
    Connect(#[source] TransportError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("site {0} stopped unexpectedly")]
    SitePanicked(u32),
}

impl RunError {
    pub(crate) fn at(phase: Phase, fault: PhaseFault) -> RunError {
        RunError::Phase { phase: phase.label(), fault }
    }

    pub(crate) fn at_kdk(fault: PhaseFault) -> RunError {
        RunError::Phase { phase: "kick-drift-kick", fault }
    }

    /// Phase label of a phase fault.
    pub fn phase(&self) -> Option<&'static str> {
        match self {
            RunError::Phase { phase, .. } => Some(phase),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    #[default]
    Comoving,
    /// Expansion frozen at a = 1; steps of `static_dt`.
    Static,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct IcConfig {
    pub kind: String,
    pub seed: u64,
    pub amplitude: f64,
    /// Read particles from this snapshot instead of generating them.
    pub snapshot: Option<PathBuf>,
}

impl Default for IcConfig {
    fn default() -> Self {
        IcConfig { kind: "uniform".into(), seed: 1, amplitude: 0.0, snapshot: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Host of every site, by site id.
    pub hosts: Vec<String>,
    /// First port; `None` reads `TREEGRID_PORT_BASE` or uses the default.
    pub port_base: Option<u16>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hosts: Vec::new(), port_base: None }
    }
}

/// Whole-run configuration, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub z_stop: f64,
    pub n_steps: usize,
    pub integrator: IntegratorKind,
    pub static_dt: f64,
    /// Gather and write a snapshot every this many steps; 0 writes only
    /// the final one.
    pub snapshot_interval: u64,
    /// No files are written when unset.
    pub output_dir: Option<PathBuf>,
    pub run: RunConfig,
    pub cosmology: CosmologyParams,
    pub transport: ChannelConfig,
    pub emulator: EmuNetConfig,
    pub ic: IcConfig,
    pub net: NetConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            z_stop: 0.0024,
            n_steps: 2,
            integrator: IntegratorKind::Comoving,
            static_dt: 1e-3,
            snapshot_interval: 0,
            output_dir: None,
            run: RunConfig::default(),
            cosmology: CosmologyParams::default(),
            transport: ChannelConfig::default(),
            emulator: EmuNetConfig::default(),
            ic: IcConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<SimConfig, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<SimConfig, RunError> {
        SimConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let cfg = |e: String| RunError::Config(e);
        self.run.validate().map_err(|e| cfg(e.to_string()))?;
        self.cosmology.validate().map_err(|e| cfg(e.to_string()))?;
        self.transport.validate().map_err(|e| cfg(e.to_string()))?;
        self.emulator.validate().map_err(|e| cfg(e.to_string()))?;
        if self.integrator == IntegratorKind::Static && !(self.static_dt > 0.0) {
            return Err(cfg("static_dt must be positive".into()));
        }
        Ok(())
    }

    pub fn integrator(&self) -> Integrator {
        match self.integrator {
            IntegratorKind::Comoving => Integrator::Comoving(self.cosmology),
            IntegratorKind::Static => Integrator::Static,
        }
    }

    /// Step boundaries: log-uniform in a from `a_initial` to a(z_stop), or
    /// uniform in time for the static integrator. A run whose end equals
    /// its start has no steps.
    pub fn schedule(&self) -> Result<Vec<f64>, RunError> {
        match self.integrator {
            IntegratorKind::Static => Ok((0..=self.n_steps).map(|i| i as f64 * self.static_dt).collect()),
            IntegratorKind::Comoving => {
                let a0 = self.cosmology.a_initial;
                let a1 = a_of_z(self.z_stop).map_err(|e| RunError::Config(e.to_string()))?;
                if a1 < a0 {
                    return Err(RunError::Config(format!("z_stop {} lies before the initial redshift", self.z_stop)));
                }
                let steps = if a1 == a0 { 0 } else { self.n_steps };
                Ok(log_a_schedule(a0, a1, steps))
            }
        }
    }
}

/// Where the initial particles come from.
#[derive(Debug, Clone)]
pub enum IcSource {
    Generate { kind: IcKind, n: usize, seed: u64, amplitude: f64 },
    Snapshot(PathBuf),
    Particles(Vec<Particle>),
}

impl IcSource {
    pub fn from_config(cfg: &SimConfig) -> Result<IcSource, RunError> {
        if let Some(p) = &cfg.ic.snapshot {
            return Ok(IcSource::Snapshot(p.clone()));
        }
        let kind: IcKind = cfg.ic.kind.parse().map_err(|e: crate::harness::HarnessError| RunError::InitialConditions(e.to_string()))?;
        Ok(IcSource::Generate { kind, n: cfg.run.n_particles as usize, seed: cfg.ic.seed, amplitude: cfg.ic.amplitude })
    }

    pub fn load(&self) -> Result<Vec<Particle>, RunError> {
        match self {
            IcSource::Generate { kind, n, seed, amplitude } => {
                if *n == 0 {
                    return Ok(Vec::new());
                }
                generate_ic(*kind, *n, *seed, *amplitude).map_err(|e| RunError::InitialConditions(e.to_string()))
            }
            IcSource::Snapshot(p) => Ok(read_snapshot(p)?.0),
            IcSource::Particles(ps) => Ok(ps.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    /// Every site in this process, connected through the network emulator.
    Emulated(EmuNetConfig),
    /// This process is one site; peers are reached over TCP.
    Net { site: u32 },
}

/// Result of a run as seen by one process. Gathered fields are filled on
/// the process hosting site 0.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub summary: RunSummary,
    /// Final particles of every site sorted by id, momenta synchronised.
    pub particles: Vec<Particle>,
    /// One row per step, merged over sites.
    pub timings: Vec<StepTimings>,
    pub site_timings: Vec<Vec<StepTimings>>,
    /// Partition after each step.
    pub domain_history: Vec<Vec<SlabDomain>>,
    pub final_time: f64,
}

/// Runs the configured schedule. With the emulated backend all sites run
/// as threads of this process; with the TCP backend this process runs one.
pub fn run_simulation(cfg: &SimConfig, ic: &IcSource, backend: &Backend) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let schedule = cfg.schedule()?;
    let particles = ic.load()?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
    }
    let n_sites = cfg.run.n_sites;
    match backend {
        Backend::Emulated(net_cfg) => {
            let net = EmuNetwork::new(net_cfg.clone()).map_err(RunError::Connect)?;
            let mut slots: Vec<Vec<Option<Channel>>> = (0..n_sites).map(|_| (0..n_sites).map(|_| None).collect()).collect();
            for i in 0..n_sites as usize {
                for j in i + 1..n_sites as usize {
                    let (a, b) = net.pair(&cfg.transport).map_err(RunError::Connect)?;
                    slots[i][j] = Some(a);
                    slots[j][i] = Some(b);
                }
            }
            let results: Vec<Result<RunOutcome, RunError>> = std::thread::scope(|s| {
                let handles: Vec<_> = slots
                    .into_iter()
                    .enumerate()
                    .map(|(site, peers)| {
                        let ps = particles.clone();
                        let sched = &schedule;
                        s.spawn(move || run_site(cfg, site as u32, ps, peers, sched, start))
                    })
                    .collect();
                handles
                    .into_iter()
                    .enumerate()
                    .map(|(i, h)| h.join().unwrap_or(Err(RunError::SitePanicked(i as u32))))
                    .collect()
            });
            // report the root cause: a failing site makes its peers fail
            // with closed channels afterwards
            let mut first_err = None;
            let mut outcome = None;
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(o) if i == 0 => outcome = Some(o),
                    Ok(_) => {}
                    Err(e) => {
                        let closed = matches!(&e, RunError::Phase { fault: PhaseFault::Transport(TransportError::Closed | TransportError::Truncated { .. }), .. });
                        if first_err.is_none() || (!closed && first_err.as_ref().is_some_and(|(c, _)| *c)) {
                            first_err = Some((closed, e));
                        }
                    }
                }
            }
            match (first_err, outcome) {
                (Some((_, e)), _) => Err(e),
                (None, Some(o)) => Ok(o),
                (None, None) => Err(RunError::SitePanicked(0)),
            }
        }
        Backend::Net { site } => {
            let peers = connect_tcp(cfg, *site)?;
            run_site(cfg, *site, particles, peers, &schedule, start)
        }
    }
}

/// TCP ports for the path between sites `i < j`: a block of `n_streams`
/// ports per pair, pairs numbered in lexicographic order.
pub fn pair_port_base(base: u16, n_sites: u32, n_streams: usize, i: u32, j: u32) -> Result<u16, RunError> {
    let idx = (0..i).map(|k| (n_sites - 1 - k) as usize).sum::<usize>() + (j - i - 1) as usize;
    u16::try_from(base as usize + idx * n_streams).map_err(|_| RunError::Config("port range exceeds 65535".into()))
}

/// The higher site id of each pair connects; the lower listens.
fn connect_tcp(cfg: &SimConfig, site: u32) -> Result<Vec<Option<Channel>>, RunError> {
    let n = cfg.run.n_sites;
    if site >= n {
        return Err(RunError::Config(format!("site {site} out of range for {n} sites")));
    }
    let hosts: Vec<String> = if cfg.net.hosts.is_empty() { vec!["127.0.0.1".into(); n as usize] } else { cfg.net.hosts.clone() };
    if hosts.len() != n as usize {
        return Err(RunError::Config(format!("{} hosts for {n} sites", hosts.len())));
    }
    let base = cfg.net.port_base.unwrap_or_else(crate::transport::default_port_base);
    let streams = cfg.transport.n_streams;
    let mut peers: Vec<Option<Channel>> = (0..n).map(|_| None).collect();
    let acceptors = (site + 1..n)
        .map(|j| {
            let port = pair_port_base(base, n, streams, site, j)?;
            tcp_listen(std::net::Ipv4Addr::UNSPECIFIED, port, &cfg.transport).map(|a| (j, a)).map_err(RunError::Connect)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for i in 0..site {
        let port = pair_port_base(base, n, streams, i, site)?;
        peers[i as usize] = Some(tcp_connect(&hosts[i as usize], port, &cfg.transport).map_err(RunError::Connect)?);
    }
    for (j, a) in acceptors {
        peers[j as usize] = Some(a.accept().map_err(RunError::Connect)?);
    }
    Ok(peers)
}

fn run_site(
    cfg: &SimConfig,
    site: u32,
    particles: Vec<Particle>,
    peers: Vec<Option<Channel>>,
    schedule: &[f64],
    start: Instant,
) -> Result<RunOutcome, RunError> {
    let mut rt = SiteRuntime::new(site, cfg.run.clone(), cfg.integrator(), cfg.cosmology.softening_box, particles, peers)?;
    let mut log = match &cfg.output_dir {
        Some(dir) => Some(TimingsLog::create(&dir.join(format!("timings_site{site}.csv")))?),
        None => None,
    };
    let snapshot_at = |path: &Path, ps: &[Particle], a: f64| write_snapshot(path, ps, &cfg.cosmology, a);
    let a_final = *schedule.last().unwrap_or(&cfg.cosmology.a_initial);
    for (k, w) in schedule.windows(2).enumerate() {
        let row = rt.run_step(w[0], w[1])?;
        if let Some(l) = log.as_mut() {
            l.append(&row)?;
        }
        let k = k as u64 + 1;
        let last = k as usize == schedule.len() - 1;
        if cfg.snapshot_interval > 0 && k % cfg.snapshot_interval == 0 && !last {
            rt.synchronize(w[1])?;
            if let (Some((ps, _)), Some(dir)) = (rt.gather()?, &cfg.output_dir) {
                snapshot_at(&dir.join(format!("snapshot_{k:05}.tgsn")), &ps, w[1])?;
            }
        }
    }
    rt.synchronize(a_final)?;
    let gathered = rt.gather()?;
    let Some((ps, site_rows)) = gathered else {
        return Ok(RunOutcome { site_timings: vec![rt.timings.clone()], final_time: a_final, ..Default::default() });
    };
    let rows = merge_site_timings(&site_rows);
    if let Some(dir) = &cfg.output_dir {
        snapshot_at(&dir.join("snapshot_final.tgsn"), &ps, a_final)?;
        write_timings_csv(&dir.join("timings.csv"), &rows)?;
    }
    let summary = RunSummary::from_rows(&rows, start.elapsed().as_secs_f64());
    if let Some(dir) = &cfg.output_dir {
        std::fs::write(dir.join("summary.txt"), format_summary(&summary))?;
    }
    Ok(RunOutcome { summary, particles: ps, timings: rows, site_timings: site_rows, domain_history: rt.domain_history.clone(), final_time: a_final })
}

pub fn format_summary(s: &RunSummary) -> String {
    format!(
        "steps={}\nwall_time_s={:?}\ninteractions={}\nsustained_interactions_per_s={:?}\npeak_interactions_per_s={:?}\n",
        s.steps, s.wall_time_s, s.total_interactions, s.sustained_interactions_per_s, s.peak_interactions_per_s
    )
}
