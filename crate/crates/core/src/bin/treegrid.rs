use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use treegrid::domain::RunConfig;
use treegrid::force::treepm_forces;
use treegrid::harness::{ewald_force, force_errors, generate_ic, run_scenario, EwaldParams, IcKind, SCENARIOS};
use treegrid::orchestrator::{format_summary, run_simulation, Backend, IcSource, SimConfig};
use treegrid::transport::{tcp_connect, tcp_listen, ChannelConfig, EmuNetConfig, EmuNetwork};
use treegrid::tree::{Body, ForceParams};

#[derive(Parser)]
#[command(name = "treegrid", version, about = "Multi-site TreePM N-body simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Emu,
    Net,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// This process's site (net backend only).
        #[arg(long, default_value_t = 0)]
        site: u32,
        /// Overrides `run.n_sites`.
        #[arg(long)]
        sites: Option<u32>,
        #[arg(long, value_enum, default_value_t = BackendArg::Emu)]
        backend: BackendArg,
        #[arg(long)]
        emu_latency_ms: Option<f64>,
        /// Emulated link bandwidth in megabits per second.
        #[arg(long)]
        emu_bandwidth_mbps: Option<f64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Time one bulk transfer over a channel.
    BenchTransport {
        #[arg(long, value_enum, default_value_t = BackendArg::Emu)]
        backend: BackendArg,
        #[arg(long, default_value_t = 64)]
        streams: usize,
        #[arg(long, default_value_t = 100_000_000)]
        bytes: usize,
        #[arg(long, default_value_t = 786_432)]
        buffer_bytes: usize,
        /// Per-stream pacing in MB/s (10^6 bytes); 0 disables pacing.
        #[arg(long, default_value_t = 10.0)]
        pace_mb_s: f64,
        #[arg(long, default_value_t = 0.0)]
        latency_ms: f64,
        #[arg(long, default_value_t = 1000.0)]
        bandwidth_mbps: f64,
        /// First TCP port for the net backend (loopback).
        #[arg(long)]
        port_base: Option<u16>,
    },
    /// Compare TreePM forces with the Ewald sum.
    Oracle {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "uniform")]
        kind: String,
        #[arg(long, default_value_t = 0.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 64)]
        mesh: usize,
        /// Opening angles to report.
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5")]
        theta: Vec<f64>,
    },
    /// Synthetic 2:1 cost imbalance between two sites.
    BalanceDemo {
        #[arg(long, default_value_t = 32768)]
        n: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        limit: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a named harness scenario and print its report.
    Scenario {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(cmd: Command) -> Result<(), AnyError> {
    match cmd {
        Command::Run { config, site, sites, backend, emu_latency_ms, emu_bandwidth_mbps, output_dir } => {
            let mut cfg = SimConfig::from_file(&config)?;
            if let Some(n) = sites {
                cfg.run.n_sites = n;
            }
            if let Some(l) = emu_latency_ms {
                cfg.emulator.one_way_latency_ms = l;
            }
            if let Some(b) = emu_bandwidth_mbps {
                cfg.emulator.bandwidth_bytes_per_s = b * 1e6 / 8.0;
            }
            if output_dir.is_some() {
                cfg.output_dir = output_dir;
            }
            let backend = match backend {
                BackendArg::Emu => Backend::Emulated(cfg.emulator.clone()),
                BackendArg::Net => Backend::Net { site },
            };
            let ic = IcSource::from_config(&cfg)?;
            let out = run_simulation(&cfg, &ic, &backend)?;
            if out.timings.is_empty() && out.site_timings.len() == 1 && !out.site_timings[0].is_empty() {
                println!("site {site} finished {} steps", out.site_timings[0].len());
            } else {
                print!("{}", format_summary(&out.summary));
            }
        }
        Command::BenchTransport { backend, streams, bytes, buffer_bytes, pace_mb_s, latency_ms, bandwidth_mbps, port_base } => {
            let cfg = ChannelConfig {
                n_streams: streams,
                buffer_bytes,
                pace_bytes_per_s: (pace_mb_s * 1e6) as u64,
                ..ChannelConfig::default()
            };
            let (mut tx, mut rx) = match backend {
                BackendArg::Emu => {
                    let net = EmuNetwork::new(EmuNetConfig {
                        one_way_latency_ms: latency_ms,
                        bandwidth_bytes_per_s: bandwidth_mbps * 1e6 / 8.0,
                        ..EmuNetConfig::default()
                    })?;
                    net.pair(&cfg)?
                }
                BackendArg::Net => {
                    let base = port_base.unwrap_or_else(treegrid::transport::default_port_base);
                    let acc = tcp_listen(std::net::Ipv4Addr::LOCALHOST, base, &cfg)?;
                    let c = cfg.clone();
                    let h = std::thread::spawn(move || tcp_connect("127.0.0.1", base, &c));
                    let server = acc.accept()?;
                    (h.join().map_err(|_| "connect thread panicked")??, server)
                }
            };
            let payload: Vec<u8> = (0..bytes).map(|i| (i.wrapping_mul(31) >> 3) as u8).collect();
            let expected = crc32fast::hash(&payload);
            let start = Instant::now();
            let recv = std::thread::spawn(move || rx.recv_message().map(|m| (m.len(), crc32fast::hash(&m))));
            tx.send_message(&payload)?;
            let (len, crc) = recv.join().map_err(|_| "receiver panicked")??;
            let secs = start.elapsed().as_secs_f64();
            println!("bytes={len}\nseconds={secs:.4}\nthroughput_mb_s={:.3}\nintact={}", len as f64 / secs / 1e6, crc == expected && len == bytes);
        }
        Command::Oracle { n, seed, kind, amplitude, mesh, theta } => {
            let kind: IcKind = kind.parse()?;
            let cfg = RunConfig::default().with_mesh(mesh);
            let eps = treegrid::domain::CosmologyParams::default().softening_box;
            let bodies: Vec<Body> = generate_ic(kind, n, seed, amplitude)?.iter().map(Body::from).collect();
            let exact = ewald_force(&bodies, eps, &EwaldParams::default())?;
            println!("theta\trms\trms_per_particle\tmax_relative\tinteractions");
            for t in theta {
                let p = ForceParams { theta: t, eps, r_split: cfg.r_split, r_cut: cfg.r_cut };
                let (acc, count) = treepm_forces(&bodies, mesh, &p, cfg.leaf_capacity)?;
                let e = force_errors(&acc, &exact);
                println!("{t}\t{:.6}\t{:.6}\t{:.6}\t{count}", e.rms, e.rms_per_particle, e.max_relative);
            }
        }
        Command::BalanceDemo { n, steps, limit, seed } => {
            let t = treegrid::harness::two_to_one_trace(n, steps, limit, seed)?;
            println!("step\tcost_spread");
            for (i, s) in t.spreads.iter().enumerate() {
                println!("{i}\t{s:.6}");
            }
            println!("max_boundary_move={:e} limit_held={}", t.max_move, t.limit_held);
        }
        Command::Scenario { name, out } => {
            let report = run_scenario(&name, out.as_deref()).map_err(|e| -> AnyError {
                match e {
                    treegrid::harness::HarnessError::UnknownScenario(_) => format!("{e}; known: {}", SCENARIOS.join(", ")).into(),
                    other => other.into(),
                }
            })?;
            print!("{}", report.to_tsv());
            if !report.passed() {
                return Err(format!("{} assertion(s) failed", report.failures().len()).into());
            }
        }
    }
    Ok(())
}
