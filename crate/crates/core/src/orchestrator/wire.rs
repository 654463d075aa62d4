//! Inter-site message bodies. Every message starts with an envelope
//! `"TGM1"`, u64 step, u8 phase, u32 sender, so a site that receives a
//! message from the wrong step or phase stops instead of mixing state.

use std::fmt;

use thiserror::Error;

use crate::balancer::SiteLoadReport;
use crate::domain::{Particle, SlabDomain};

const MAGIC: [u8; 4] = *b"TGM1";
pub const ENVELOPE_LEN: usize = 4 + 8 + 1 + 4;
const PARTICLE_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Sample = 1,
    Boundaries = 2,
    Migrate = 3,
    Mesh = 4,
    Let = 5,
    Crossing = 6,
    Gather = 7,
}

impl Phase {
    fn from_u8(v: u8) -> Option<Phase> {
        use Phase::*;
        [Sample, Boundaries, Migrate, Mesh, Let, Crossing, Gather].into_iter().find(|p| *p as u8 == v)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Phase::Sample => "sample exchange",
            Phase::Boundaries => "boundary update",
            Phase::Migrate => "migration",
            Phase::Mesh => "mesh exchange",
            Phase::Let => "LET exchange",
            Phase::Crossing => "boundary-crossing migration",
            Phase::Gather => "snapshot gather",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("message truncated: needed {needed} bytes at offset {offset}, have {len}")]
    Truncated { needed: usize, offset: usize, len: usize },
    #[error("bad envelope magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("synchronization fault: expected step {expected} phase {phase}, got step {got_step} phase {got_phase}")]
    OutOfStep { expected: u64, phase: u8, got_step: u64, got_phase: u8 },
    #[error("expected a message from site {expected}, got site {got}")]
    WrongSender { expected: u32, got: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
}

pub fn envelope(step: u64, phase: Phase, sender: u32, body_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENVELOPE_LEN + body_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&step.to_le_bytes());
    out.push(phase as u8);
    out.extend_from_slice(&sender.to_le_bytes());
    out
}

/// Checks the envelope and returns the body.
pub fn open(bytes: &[u8], step: u64, phase: Phase, sender: u32) -> Result<&[u8], WireError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let got_step = r.u64()?;
    let got_phase = r.take(1)?[0];
    let got_sender = r.u32()?;
    if got_step != step || Phase::from_u8(got_phase) != Some(phase) {
        return Err(WireError::OutOfStep { expected: step, phase: phase as u8, got_step, got_phase });
    }
    if got_sender != sender {
        return Err(WireError::WrongSender { expected: sender, got: got_sender });
    }
    Ok(&bytes[ENVELOPE_LEN..])
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated { needed: n, offset: self.pos, len: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Everything not yet read.
    pub fn rest(self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }

    /// Element count that is plausible for the bytes remaining.
    fn count(&mut self, elem: usize) -> Result<usize, WireError> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem as u64) > left {
            return Err(WireError::Truncated { needed: (n as usize).saturating_mul(elem), offset: self.pos, len: self.buf.len() });
        }
        Ok(n as usize)
    }
}

pub fn put_particles(out: &mut Vec<u8>, particles: &[Particle]) {
    out.reserve(8 + PARTICLE_LEN * particles.len());
    out.extend_from_slice(&(particles.len() as u64).to_le_bytes());
    for p in particles {
        out.extend_from_slice(&p.id.to_le_bytes());
        for v in p.pos.iter().chain(&p.mom).chain(std::iter::once(&p.mass)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn get_particles(r: &mut Reader) -> Result<Vec<Particle>, WireError> {
    let n = r.count(PARTICLE_LEN)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let mut v = [0.0; 7];
        for x in v.iter_mut() {
            *x = r.f64()?;
        }
        out.push(Particle { id, pos: [v[0], v[1], v[2]], mom: [v[3], v[4], v[5]], mass: v[6] });
    }
    Ok(out)
}

pub fn put_report(out: &mut Vec<u8>, r: &SiteLoadReport) {
    out.extend_from_slice(&r.site_id.to_le_bytes());
    out.extend_from_slice(&r.force_time_s.to_le_bytes());
    out.extend_from_slice(&r.particle_count.to_le_bytes());
    out.extend_from_slice(&(r.sample_positions.len() as u64).to_le_bytes());
    for x in &r.sample_positions {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn get_report(r: &mut Reader) -> Result<SiteLoadReport, WireError> {
    let site_id = r.u32()?;
    let force_time_s = r.f64()?;
    let particle_count = r.u64()?;
    let n = r.count(8)?;
    let sample_positions = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
    Ok(SiteLoadReport { site_id, force_time_s, particle_count, sample_positions })
}

pub fn put_domains(out: &mut Vec<u8>, domains: &[SlabDomain]) {
    out.extend_from_slice(&(domains.len() as u64).to_le_bytes());
    for d in domains {
        out.extend_from_slice(&d.site_id.to_le_bytes());
        out.extend_from_slice(&d.lo.to_le_bytes());
        out.extend_from_slice(&d.hi.to_le_bytes());
    }
}

pub fn get_domains(r: &mut Reader) -> Result<Vec<SlabDomain>, WireError> {
    let n = r.count(20)?;
    (0..n)
        .map(|_| Ok(SlabDomain { site_id: r.u32()?, lo: r.f64()?, hi: r.f64()? }))
        .collect()
}
