//! One site's state and the bulk-synchronous step. Every exchange sends one
//! message to each peer and then reads one from each peer in site order, so
//! results never depend on arrival order.

use std::time::Instant;

use super::wire::{self, Phase, Reader};
use super::{PhaseFault, RunError};
use crate::balancer::{propose_boundaries, sample_particles, BalanceParams, SiteLoadReport};
use crate::cosmology::{drift, kick, z_of_a, Integrator};
use crate::domain::{owner_of, validate_domains, Particle, RunConfig, SlabDomain, StepTimings, Vec3};
use crate::mesh::{cic_assign, cic_interpolate, slab_cells, solve_long_range_partitioned, sparse_encode, DensityMesh, SparseMeshPayload};
use crate::transport::Channel;
use crate::tree::{build_merged_tree, build_tree, extract_let, tree_forces, Body, Bounds, ForceParams, LetPayload};

/// Everything one site holds between steps.
pub struct SiteRuntime {
    pub site_id: u32,
    pub domains: Vec<SlabDomain>,
    pub particles: Vec<Particle>,
    /// Indexed by peer site id; `None` at this site's own index.
    peers: Vec<Option<Channel>>,
    pub timings: Vec<StepTimings>,
    /// Partition in force after each step, for auditing boundary moves.
    pub domain_history: Vec<Vec<SlabDomain>>,
    pub config: RunConfig,
    integrator: Integrator,
    force: ForceParams,
    pool: rayon::ThreadPool,
    /// Exchange round; stamped on every message.
    round: u64,
    steps_done: u64,
    /// Time coordinate the momenta currently refer to.
    mom_time: Option<f64>,
    last_force_time: f64,
    census: Option<u64>,
}

/// Per-step accumulators; comm columns hold time spent inside exchanges.
#[derive(Default)]
struct Clock {
    calc: f64,
    migrate: f64,
    sample: f64,
    let_: f64,
    mesh: f64,
}

impl SiteRuntime {
    /// `peers[i]` must connect to site `i`, with `None` at `site_id`.
    pub fn new(
        site_id: u32,
        config: RunConfig,
        integrator: Integrator,
        softening: f64,
        particles: Vec<Particle>,
        peers: Vec<Option<Channel>>,
    ) -> Result<SiteRuntime, RunError> {
        config.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if peers.len() != config.n_sites as usize || site_id >= config.n_sites {
            return Err(RunError::Config(format!("site {site_id} with {} peer slots for {} sites", peers.len(), config.n_sites)));
        }
        if peers.iter().enumerate().any(|(i, p)| p.is_some() == (i == site_id as usize)) {
            return Err(RunError::Config("every peer except this site needs a channel".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers_per_site)
            .thread_name(move |i| format!("tg-site{site_id}-w{i}"))
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?;
        let force = ForceParams { theta: config.theta, eps: softening, r_split: config.r_split, r_cut: config.r_cut };
        let domains = SlabDomain::equal_partition(config.n_sites);
        let mine = domains[site_id as usize];
        let mut particles: Vec<Particle> = particles.into_iter().filter(|p| mine.contains_x(p.pos[0])).collect();
        particles.sort_by_key(|p| p.id);
        Ok(SiteRuntime {
            site_id,
            domains,
            particles,
            peers,
            timings: Vec::new(),
            domain_history: Vec::new(),
            config,
            integrator,
            force,
            pool,
            round: 0,
            steps_done: 0,
            mom_time: None,
            last_force_time: 0.0,
            census: None,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.peers.len()
    }

    fn peer_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_sites()).filter(move |i| *i != self.site_id as usize)
    }

    fn channel(&mut self, peer: usize, phase: Phase) -> Result<&mut Channel, RunError> {
        self.peers[peer]
            .as_mut()
            .ok_or_else(|| RunError::at(phase, PhaseFault::Sync(format!("no channel to site {peer}"))))
    }

    fn send(&mut self, peer: usize, phase: Phase, body: &[u8]) -> Result<(), RunError> {
        let mut msg = wire::envelope(self.round, phase, self.site_id, body.len());
        msg.extend_from_slice(body);
        self.channel(peer, phase)?.send_message(&msg).map_err(|e| RunError::at(phase, e.into()))?;
        Ok(())
    }

    fn recv(&mut self, peer: usize, phase: Phase) -> Result<Vec<u8>, RunError> {
        let msg = self.channel(peer, phase)?.recv_message().map_err(|e| RunError::at(phase, e.into()))?;
        let body = wire::open(&msg, self.round, phase, peer as u32).map_err(|e| RunError::at(phase, e.into()))?;
        Ok(body.to_vec())
    }

    /// Sends `bodies[peer]` to every peer, then returns one body per site
    /// (empty at this site's index).
    fn exchange(&mut self, phase: Phase, bodies: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, RunError> {
        let peers: Vec<usize> = self.peer_ids().collect();
        for &p in &peers {
            self.send(p, phase, &bodies[p])?;
        }
        let mut out = vec![Vec::new(); self.n_sites()];
        for &p in &peers {
            out[p] = self.recv(p, phase)?;
        }
        Ok(out)
    }

    /// Particles leaving for each site under the current domains.
    fn outgoing(&mut self) -> Vec<Vec<u8>> {
        let mut buckets: Vec<Vec<Particle>> = vec![Vec::new(); self.n_sites()];
        let me = self.site_id as usize;
        let mut stay = Vec::with_capacity(self.particles.len());
        for p in self.particles.drain(..) {
            let owner = owner_of(&self.domains, p.pos[0]);
            if owner == me {
                stay.push(p);
            } else {
                buckets[owner].push(p);
            }
        }
        self.particles = stay;
        buckets
            .iter()
            .map(|b| {
                let mut out = Vec::new();
                wire::put_particles(&mut out, b);
                out
            })
            .collect()
    }

    fn migrate(&mut self, phase: Phase) -> Result<(), RunError> {
        let out = self.outgoing();
        let got = self.exchange(phase, out)?;
        for (peer, body) in got.iter().enumerate() {
            if peer == self.site_id as usize {
                continue;
            }
            let mut r = Reader::new(body);
            let ps = wire::get_particles(&mut r).map_err(|e| RunError::at(phase, e.into()))?;
            r.finish().map_err(|e| RunError::at(phase, e.into()))?;
            self.particles.extend(ps);
        }
        self.particles.sort_by_key(|p| p.id);
        let mine = self.domains[self.site_id as usize];
        if let Some(p) = self.particles.iter().find(|p| !mine.contains_x(p.pos[0])) {
            return Err(RunError::at(phase, PhaseFault::Sync(format!("particle {} at x={} outside slab {mine:?}", p.id, p.pos[0]))));
        }
        Ok(())
    }

    /// Phase 1: site 0 gathers load reports, proposes boundaries and
    /// broadcasts them.
    fn balance(&mut self) -> Result<(), RunError> {
        let phase = Phase::Sample;
        let xs: Vec<f64> = self.particles.iter().map(|p| p.pos[0]).collect();
        let seed = self.config.seed ^ (self.round << 16) ^ self.site_id as u64;
        let samples = sample_particles(&xs, self.config.sampling_rate, seed).map_err(|e| RunError::at(phase, e.into()))?;
        let report = SiteLoadReport {
            site_id: self.site_id,
            force_time_s: self.last_force_time,
            particle_count: self.particles.len() as u64,
            sample_positions: samples,
        };
        if self.site_id != 0 {
            let mut body = Vec::new();
            wire::put_report(&mut body, &report);
            self.send(0, phase, &body)?;
            let body = self.recv(0, Phase::Boundaries)?;
            let mut r = Reader::new(&body);
            let domains = wire::get_domains(&mut r).map_err(|e| RunError::at(Phase::Boundaries, e.into()))?;
            r.finish().map_err(|e| RunError::at(Phase::Boundaries, e.into()))?;
            validate_domains(&domains).map_err(|e| RunError::at(Phase::Boundaries, e.into()))?;
            if domains.len() != self.n_sites() {
                return Err(RunError::at(Phase::Boundaries, PhaseFault::Sync("partition has the wrong site count".into())));
            }
            self.domains = domains;
            return Ok(());
        }
        let mut reports = vec![report];
        for p in 1..self.n_sites() {
            let body = self.recv(p, phase)?;
            let mut r = Reader::new(&body);
            let rep = wire::get_report(&mut r).map_err(|e| RunError::at(phase, e.into()))?;
            r.finish().map_err(|e| RunError::at(phase, e.into()))?;
            reports.push(rep);
        }
        let total: u64 = reports.iter().map(|r| r.particle_count).sum();
        match self.census {
            None => self.census = Some(total),
            Some(c) if c != total => {
                return Err(RunError::at(phase, PhaseFault::Sync(format!("census changed from {c} to {total}"))));
            }
            _ => {}
        }
        let params = BalanceParams {
            alpha: self.config.balance_alpha,
            move_limit: self.config.boundary_move_limit,
            min_width: self.config.min_slab_width(),
        };
        let domains = propose_boundaries(&self.domains, &reports, &params).map_err(|e| RunError::at(phase, e.into()))?;
        let mut body = Vec::new();
        wire::put_domains(&mut body, &domains);
        for p in 1..self.n_sites() {
            self.send(p, Phase::Boundaries, &body)?;
        }
        self.domains = domains;
        Ok(())
    }

    /// Phases 3 and 4: accelerations of the local particles and the tree
    /// interaction count.
    fn forces(&mut self, clock: &mut Clock) -> Result<(Vec<Vec3>, u64), RunError> {
        let n = self.config.mesh_size;
        let bodies: Vec<Body> = self.particles.iter().map(Body::from).collect();

        let t = Instant::now();
        let mine = self.domains[self.site_id as usize];
        let local_mesh = cic_assign(&bodies, n, slab_cells(mine.lo, mine.hi, n)).map_err(|e| RunError::at(Phase::Mesh, e.into()))?;
        let encoded = sparse_encode(&local_mesh).to_bytes();
        clock.calc += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let got = self.exchange(Phase::Mesh, vec![encoded; self.n_sites()])?;
        clock.mesh += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut mesh = DensityMesh::zeros(n);
        for (site, body) in got.iter().enumerate() {
            let r = if site == self.site_id as usize {
                mesh.accumulate(&local_mesh)
            } else {
                SparseMeshPayload::from_bytes(body).and_then(|p| mesh.accumulate_sparse(&p))
            };
            r.map_err(|e| RunError::at(Phase::Mesh, e.into()))?;
        }
        let partitions: Vec<_> = self.domains.iter().map(|d| slab_cells(d.lo, d.hi, n)).collect();
        let r_split = self.force.r_split;
        let field = self
            .pool
            .install(|| solve_long_range_partitioned(&mesh, r_split, &partitions))
            .map_err(|e| RunError::at(Phase::Mesh, e.into()))?;
        drop(mesh);

        let leaf = self.config.leaf_capacity;
        let local_tree = build_tree(&bodies, Bounds::unit(), leaf).map_err(|e| RunError::at(Phase::Let, e.into()))?;
        let lets: Vec<Vec<u8>> = self
            .domains
            .iter()
            .map(|d| {
                if d.site_id == self.site_id {
                    Vec::new()
                } else {
                    extract_let(&local_tree, self.site_id, d, self.force.theta, self.force.r_cut).encode()
                }
            })
            .collect();
        drop(local_tree);
        clock.calc += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let got = self.exchange(Phase::Let, lets)?;
        clock.let_ += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut payloads = Vec::new();
        for (site, body) in got.iter().enumerate() {
            if site == self.site_id as usize {
                continue;
            }
            let p = LetPayload::decode(body).map_err(|e| RunError::at(Phase::Let, e.into()))?;
            if p.origin as usize != site || p.destination != self.site_id {
                return Err(RunError::at(Phase::Let, PhaseFault::Sync(format!("LET {}->{} arrived from site {site}", p.origin, p.destination))));
            }
            payloads.push(p);
        }
        let roots: Vec<_> = payloads.iter().filter_map(|p| p.root.as_ref()).collect();
        let tree = build_merged_tree(&bodies, &roots, Bounds::unit(), leaf).map_err(|e| RunError::at(Phase::Let, e.into()))?;
        let targets: Vec<Vec3> = bodies.iter().map(|b| b.pos).collect();
        let force = self.force;
        let (acc, count) = self.pool.install(|| {
            use rayon::prelude::*;
            let (mut acc, count) = tree_forces(&tree, &targets, &force);
            acc.par_iter_mut().zip(targets.par_iter()).for_each(|(a, x)| {
                let l = cic_interpolate(&field, x);
                for k in 0..3 {
                    a[k] += l[k];
                }
            });
            (acc, count)
        });
        clock.calc += t.elapsed().as_secs_f64();
        Ok((acc, count))
    }

    /// One step from `a_start` to `a_end`: balance, migrate, mesh and tree
    /// forces, kick-drift-kick, wrap and boundary-crossing migration.
    /// Momenta are left at the step's kick midpoint; [`SiteRuntime::synchronize`]
    /// brings them to the current time.
    pub fn run_step(&mut self, a_start: f64, a_end: f64) -> Result<StepTimings, RunError> {
        let start = Instant::now();
        let mut clock = Clock::default();

        let t = Instant::now();
        self.balance()?;
        clock.sample += t.elapsed().as_secs_f64();

        let t = Instant::now();
        self.migrate(Phase::Migrate)?;
        clock.migrate += t.elapsed().as_secs_f64();

        // the balancer's cost uses compute time only, not exchange waits
        let (acc, interactions) = self.forces(&mut clock)?;
        self.last_force_time = clock.calc;

        let t = Instant::now();
        let from = self.mom_time.unwrap_or(a_start);
        let mid = self.integrator.midpoint(a_start, a_end);
        let kick_c = self.integrator.coefficients(from, mid).map_err(|e| RunError::at_kdk(e.into()))?;
        let drift_c = self.integrator.coefficients(a_start, a_end).map_err(|e| RunError::at_kdk(e.into()))?;
        kick(&mut self.particles, &acc, kick_c.kick).map_err(|e| RunError::at_kdk(e.into()))?;
        drift(&mut self.particles, drift_c.drift).map_err(|e| RunError::at_kdk(e.into()))?;
        self.mom_time = Some(mid);
        clock.calc += t.elapsed().as_secs_f64();

        let t = Instant::now();
        self.migrate(Phase::Crossing)?;
        clock.migrate += t.elapsed().as_secs_f64();

        self.round += 1;
        self.domain_history.push(self.domains.clone());
        let row = StepTimings {
            step: self.steps_done,
            z: match self.integrator {
                Integrator::Comoving(_) => z_of_a(a_end),
                Integrator::Static => 0.0,
            },
            calc_s: clock.calc,
            migrate_s: clock.migrate,
            sample_s: clock.sample,
            let_s: clock.let_,
            mesh_s: clock.mesh,
            total_s: start.elapsed().as_secs_f64(),
            interactions,
        };
        self.steps_done += 1;
        self.timings.push(row);
        Ok(row)
    }

    /// Closing half-kick: forces at the current positions and momenta
    /// advanced from the last kick midpoint to `a_now`.
    pub fn synchronize(&mut self, a_now: f64) -> Result<(), RunError> {
        let Some(from) = self.mom_time else {
            return Ok(());
        };
        let mut clock = Clock::default();
        let (acc, _) = self.forces(&mut clock)?;
        let c = self.integrator.coefficients(from, a_now).map_err(|e| RunError::at_kdk(e.into()))?;
        kick(&mut self.particles, &acc, c.kick).map_err(|e| RunError::at_kdk(e.into()))?;
        self.mom_time = Some(a_now);
        self.round += 1;
        Ok(())
    }

    /// Collects every site's particles (sorted by id) and timing rows at
    /// site 0. Other sites get `None`.
    pub fn gather(&mut self) -> Result<Option<(Vec<Particle>, Vec<Vec<StepTimings>>)>, RunError> {
        let phase = Phase::Gather;
        let encode_rows = |rows: &[StepTimings]| rows.iter().map(|r| r.to_csv_row()).collect::<Vec<_>>().join("\n");
        if self.site_id != 0 {
            let mut body = Vec::new();
            wire::put_particles(&mut body, &self.particles);
            body.extend_from_slice(encode_rows(&self.timings).as_bytes());
            self.send(0, phase, &body)?;
            self.round += 1;
            return Ok(None);
        }
        let mut all = self.particles.clone();
        let mut rows = vec![self.timings.clone()];
        for p in 1..self.n_sites() {
            let body = self.recv(p, phase)?;
            let mut r = Reader::new(&body);
            all.extend(wire::get_particles(&mut r).map_err(|e| RunError::at(phase, e.into()))?);
            let text = std::str::from_utf8(r.rest()).map_err(|e| RunError::at(phase, PhaseFault::Sync(e.to_string())))?;
            let site_rows = text
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| StepTimings::from_csv_row(l).ok_or_else(|| RunError::at(phase, PhaseFault::Sync(format!("bad timings row {l:?}")))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(site_rows);
        }
        all.sort_by_key(|p| p.id);
        self.round += 1;
        Ok(Some((all, rows)))
    }
}
