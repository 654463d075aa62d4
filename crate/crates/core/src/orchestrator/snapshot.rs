//! Binary particle snapshots, little-endian:
//! `"TGSN"`, u32 version, u64 N, f64 a, f64 box_mpc, f64 omega0,
//! f64 lambda0, f64 h0, f64 sigma8, then N records of
//! (u64 id, 3 x f64 pos, 3 x f64 mom, f64 mass).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::domain::{CosmologyParams, Particle};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"TGSN";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 6 * 8;
const RECORD_LEN: usize = 8 + 7 * 8;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("header announces {expected} particles but the file holds {found} bytes of records")]
    Truncated { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_snapshot(path: &Path, particles: &[Particle], cosmo: &CosmologyParams, a: f64) -> Result<(), SnapshotError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(particles.len() as u64).to_le_bytes())?;
    for v in [a, cosmo.box_mpc, cosmo.omega0, cosmo.lambda0, cosmo.h0, cosmo.sigma8] {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in particles {
        w.write_all(&p.id.to_le_bytes())?;
        for v in p.pos.iter().chain(&p.mom).chain(std::iter::once(&p.mass)) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cosmology fields the file does not carry keep their defaults.
pub fn read_snapshot(path: &Path) -> Result<(Vec<Particle>, CosmologyParams, f64), SnapshotError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(SnapshotError::Truncated { expected: 0, found: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Truncated { expected: 0, found: bytes.len() as u64 });
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = (bytes.len() - HEADER_LEN) as u64;
    if n.checked_mul(RECORD_LEN as u64) != Some(body) {
        return Err(SnapshotError::Truncated { expected: n, found: body });
    }
    let a = f64_at(16);
    let cosmo = CosmologyParams {
        box_mpc: f64_at(24),
        omega0: f64_at(32),
        lambda0: f64_at(40),
        h0: f64_at(48),
        sigma8: f64_at(56),
        ..CosmologyParams::default()
    };
    let particles = (0..n as usize)
        .map(|i| {
            let o = HEADER_LEN + i * RECORD_LEN;
            let v = |k: usize| f64_at(o + 8 + 8 * k);
            Particle {
                id: u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()),
                pos: [v(0), v(1), v(2)],
                mom: [v(3), v(4), v(5)],
                mass: v(6),
            }
        })
        .collect();
    Ok((particles, cosmo, a))
}
