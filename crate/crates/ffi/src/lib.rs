//! C ABI over the treegrid simulator.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`TgStatus`]; on
//! failure the message is kept per thread and read with
//! [`tg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use treegrid::harness::{ewald_force, EwaldParams};
use treegrid::orchestrator::{run_simulation, Backend, IcSource, RunOutcome, SimConfig};
use treegrid::transport::EmuNetConfig;
use treegrid::tree::Body;

/// Result codes. `Ok` is zero; everything else is an error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Run = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Simulation configuration.
pub struct TgConfig {
    inner: SimConfig,
}

/// Finished run: final particles, timings and summary.
pub struct TgRun {
    inner: RunOutcome,
}

/// Rates of a finished run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TgSummary {
    pub steps: u64,
    pub wall_time_s: f64,
    pub total_interactions: u64,
    pub sustained_interactions_per_s: f64,
    pub peak_interactions_per_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: TgStatus, msg: impl Into<String>) -> TgStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TgStatus) -> TgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TgStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, TgStatus> {
    if p.is_null() {
        return Err(fail(TgStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TgStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// without the terminator, or 0 if there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tg_config_new(out: *mut *mut TgConfig) -> TgStatus {
    guard(|| {
        if out.is_null() {
            return fail(TgStatus::NullPointer, "out is null");
        }
        *out = Box::into_raw(Box::new(TgConfig { inner: SimConfig::default() }));
        TgStatus::Ok
    })
}

/// Parses a TOML configuration document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tg_config_from_toml(toml: *const c_char, out: *mut *mut TgConfig) -> TgStatus {
    guard(|| {
        if out.is_null() {
            return fail(TgStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match SimConfig::from_toml_str(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(TgConfig { inner: cfg }));
                TgStatus::Ok
            }
            Err(e) => fail(TgStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must be null or a handle from `tg_config_new`/`tg_config_from_toml`
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_config_free(cfg: *mut TgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn with_config(cfg: *mut TgConfig, f: impl FnOnce(&mut SimConfig)) -> TgStatus {
    guard(|| match cfg.as_mut() {
        None => fail(TgStatus::NullPointer, "config is null"),
        Some(c) => {
            f(&mut c.inner);
            TgStatus::Ok
        }
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn tg_config_set_particles(cfg: *mut TgConfig, n: u64) -> TgStatus {
    with_config(cfg, |c| c.run.n_particles = n)
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn tg_config_set_sites(cfg: *mut TgConfig, n_sites: u32) -> TgStatus {
    with_config(cfg, |c| c.run.n_sites = n_sites)
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn tg_config_set_steps(cfg: *mut TgConfig, n_steps: usize) -> TgStatus {
    with_config(cfg, |c| c.n_steps = n_steps)
}

/// Sets mesh cells per axis and rescales the force split to match.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn tg_config_set_mesh(cfg: *mut TgConfig, mesh_size: usize) -> TgStatus {
    with_config(cfg, |c| c.run = c.run.clone().with_mesh(mesh_size))
}

/// Directory for timings and snapshots; null disables output.
///
/// # Safety
/// `cfg` must be a live config handle; `dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tg_config_set_output_dir(cfg: *mut TgConfig, dir: *const c_char) -> TgStatus {
    let path = if dir.is_null() {
        None
    } else {
        match str_arg(dir) {
            Ok(d) => Some(PathBuf::from(d)),
            Err(s) => return s,
        }
    };
    with_config(cfg, |c| c.output_dir = path)
}

/// Runs the configured simulation with every site on an in-process
/// emulated network.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tg_run_emulated(
    cfg: *const TgConfig,
    latency_ms: f64,
    bandwidth_bytes_per_s: f64,
    out: *mut *mut TgRun,
) -> TgStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(TgStatus::NullPointer, "config or out is null");
        };
        let emu = EmuNetConfig { one_way_latency_ms: latency_ms, bandwidth_bytes_per_s, ..EmuNetConfig::default() };
        let ic = match IcSource::from_config(&cfg.inner) {
            Ok(ic) => ic,
            Err(e) => return fail(TgStatus::Config, e.to_string()),
        };
        match run_simulation(&cfg.inner, &ic, &Backend::Emulated(emu)) {
            Ok(o) => {
                *out = Box::into_raw(Box::new(TgRun { inner: o }));
                TgStatus::Ok
            }
            Err(e) => fail(TgStatus::Run, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn tg_run_free(run: *mut TgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of particles in the final state; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn tg_run_particle_count(run: *const TgRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.particles.len())
}

/// Copies final positions (x, y, z per particle, sorted by id) into
/// `xyz`, which must hold `3 * count` doubles.
///
/// # Safety
/// `run` must be a live run handle; `xyz` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tg_run_positions(run: *const TgRun, xyz: *mut f64, len: usize) -> TgStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), xyz.is_null()) else {
            return fail(TgStatus::NullPointer, "run or buffer is null");
        };
        let need = 3 * r.inner.particles.len();
        if len < need {
            return fail(TgStatus::BufferTooSmall, format!("need {need} doubles, got {len}"));
        }
        let dst = std::slice::from_raw_parts_mut(xyz, need);
        for (chunk, p) in dst.chunks_exact_mut(3).zip(&r.inner.particles) {
            chunk.copy_from_slice(&p.pos);
        }
        TgStatus::Ok
    })
}

/// # Safety
/// `run` must be a live run handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tg_run_summary(run: *const TgRun, out: *mut TgSummary) -> TgStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(TgStatus::NullPointer, "run or out is null");
        };
        let s = &r.inner.summary;
        *out = TgSummary {
            steps: s.steps,
            wall_time_s: s.wall_time_s,
            total_interactions: s.total_interactions,
            sustained_interactions_per_s: s.sustained_interactions_per_s,
            peak_interactions_per_s: s.peak_interactions_per_s,
        };
        TgStatus::Ok
    })
}

/// Force-phase seconds of step `step` (merged over sites).
///
/// # Safety
/// `run` must be a live run handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tg_run_step_force_seconds(run: *const TgRun, step: usize, out: *mut f64) -> TgStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(TgStatus::NullPointer, "run or out is null");
        };
        match r.inner.timings.get(step) {
            Some(t) => {
                *out = t.calc_s;
                TgStatus::Ok
            }
            None => fail(TgStatus::OutOfRange, format!("step {step} of {}", r.inner.timings.len())),
        }
    })
}

/// Periodic Ewald accelerations for `n` bodies in the unit box.
/// `xyz` and `accel` hold `3 * n` doubles, `mass` holds `n`.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tg_ewald_forces(
    xyz: *const f64,
    mass: *const f64,
    n: usize,
    eps: f64,
    accel: *mut f64,
) -> TgStatus {
    guard(|| {
        if n > 0 && (xyz.is_null() || mass.is_null() || accel.is_null()) {
            return fail(TgStatus::NullPointer, "array argument is null");
        }
        if n == 0 {
            return TgStatus::Ok;
        }
        let pos = std::slice::from_raw_parts(xyz, 3 * n);
        let m = std::slice::from_raw_parts(mass, n);
        let bodies: Vec<Body> =
            (0..n).map(|i| Body { id: i as u64, pos: [pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]], mass: m[i] }).collect();
        match ewald_force(&bodies, eps, &EwaldParams::default()) {
            Ok(acc) => {
                let dst = std::slice::from_raw_parts_mut(accel, 3 * n);
                for (chunk, a) in dst.chunks_exact_mut(3).zip(&acc) {
                    chunk.copy_from_slice(a);
                }
                TgStatus::Ok
            }
            Err(e) => fail(TgStatus::Config, e.to_string()),
        }
    })
}
