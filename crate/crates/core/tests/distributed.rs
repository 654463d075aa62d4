use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treegrid::cosmology::Integrator;
use treegrid::domain::{CosmologyParams, Particle, RunConfig};
use treegrid::harness::{generate_ic, IcKind};
use treegrid::orchestrator::{run_simulation, Backend, IcSource, IntegratorKind, PhaseFault, RunError, SimConfig, SiteRuntime};
use treegrid::transport::{Channel, ChannelConfig, EmuNetConfig, EmuNetwork, TransportError};

fn config(n: u64, sites: u32) -> SimConfig {
    SimConfig {
        n_steps: 5,
        integrator: IntegratorKind::Static,
        static_dt: 2e-3,
        run: RunConfig { n_particles: n, n_sites: sites, ..RunConfig::default().with_mesh(16) },
        cosmology: CosmologyParams { softening_box: 1e-3, ..CosmologyParams::default() },
        transport: ChannelConfig { n_streams: 2, pace_bytes_per_s: 0, chunk_bytes: 4096, ..ChannelConfig::default() },
        ..SimConfig::default()
    }
}

fn particles(n: usize, seed: u64, clustered: bool) -> Vec<Particle> {
    let kind = if clustered { IcKind::Plummer } else { IcKind::UniformRandom };
    let mut ps = generate_ic(kind, n, seed, 0.04).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for p in &mut ps {
        p.mom = [rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    }
    ps
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, ..ProptestConfig::default() })]

    #[test]
    fn distributed_positions_match_serial(n in 1usize..600, sites in 1u32..=4, seed in any::<u64>(), clustered in any::<bool>()) {
        let ps = particles(n, seed, clustered);
        let emu = Backend::Emulated(EmuNetConfig::default());
        let one = run_simulation(&config(n as u64, 1), &IcSource::Particles(ps.clone()), &emu).unwrap();
        let many = run_simulation(&config(n as u64, sites), &IcSource::Particles(ps), &emu).unwrap();
        prop_assert_eq!(one.particles.len(), many.particles.len());
        for (a, b) in one.particles.iter().zip(&many.particles) {
            prop_assert_eq!(a.id, b.id);
            for k in 0..3 {
                prop_assert!((a.pos[k] - b.pos[k]).abs() <= 1e-10, "{:?} vs {:?}", a, b);
            }
        }
        prop_assert_eq!(one.summary.total_interactions, many.summary.total_interactions);
    }
}

fn two_sites() -> (SiteRuntime, SiteRuntime, std::sync::Arc<EmuNetwork>) {
    let cfg = config(64, 2);
    let net = EmuNetwork::new(EmuNetConfig::default()).unwrap();
    let (a, b) = net.pair(&cfg.transport).unwrap();
    let ps = particles(64, 1, false);
    let mk = |site: u32, peers: Vec<Option<Channel>>| {
        SiteRuntime::new(site, cfg.run.clone(), Integrator::Static, 1e-3, ps.clone(), peers).unwrap()
    };
    (mk(0, vec![None, Some(a)]), mk(1, vec![Some(b), None]), net)
}

#[test]
fn out_of_step_peer_is_a_synchronization_fault() {
    let (mut s0, mut s1, _net) = two_sites();
    // site 1 skips straight to the final gather while site 0 starts a step
    let h = std::thread::spawn(move || {
        let _ = s1.gather();
        s1
    });
    let err = s0.run_step(0.0, 1e-3).unwrap_err();
    assert_eq!(err.phase(), Some("sample exchange"));
    assert!(err.to_string().contains("synchronization fault"), "{err}");
    drop(h.join().unwrap());
}

#[test]
fn closed_peer_surfaces_with_phase_label() {
    let (mut s0, s1, _net) = two_sites();
    drop(s1);
    match s0.run_step(0.0, 1e-3) {
        Err(RunError::Phase { phase: "sample exchange", fault: PhaseFault::Transport(TransportError::Closed) }) => {}
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn zero_particles_three_sites_emit_rows() {
    let emu = Backend::Emulated(EmuNetConfig::default());
    let out = run_simulation(&config(0, 3), &IcSource::Particles(Vec::new()), &emu).unwrap();
    assert_eq!(out.timings.len(), 5);
    assert!(out.timings.iter().all(|r| r.interactions == 0));
}
