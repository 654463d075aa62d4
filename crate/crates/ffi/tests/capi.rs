use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use treegrid_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { tg_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut TgConfig {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(tg_config_new(&mut cfg), TgStatus::Ok);
        assert_eq!(tg_config_set_particles(cfg, 512), TgStatus::Ok);
        assert_eq!(tg_config_set_mesh(cfg, 16), TgStatus::Ok);
        assert_eq!(tg_config_set_steps(cfg, 2), TgStatus::Ok);
    }
    cfg
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(tg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn distributed_run_through_the_c_api_matches_serial() {
    let positions = |sites: u32| unsafe {
        let cfg = small_config();
        assert_eq!(tg_config_set_sites(cfg, sites), TgStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(tg_run_emulated(cfg, 0.0, 125e6, &mut run), TgStatus::Ok, "{}", last_error());
        let n = tg_run_particle_count(run);
        let mut xyz = vec![0.0; 3 * n];
        assert_eq!(tg_run_positions(run, xyz.as_mut_ptr(), xyz.len()), TgStatus::Ok);
        let mut s = TgSummary::default();
        assert_eq!(tg_run_summary(run, &mut s), TgStatus::Ok);
        assert_eq!(s.steps, 2);
        assert!(s.total_interactions > 0);
        let mut t = -1.0;
        assert_eq!(tg_run_step_force_seconds(run, 1, &mut t), TgStatus::Ok);
        assert!(t >= 0.0);
        assert_eq!(tg_run_step_force_seconds(run, 2, &mut t), TgStatus::OutOfRange);
        tg_run_free(run);
        tg_config_free(cfg);
        xyz
    };
    let one = positions(1);
    let three = positions(3);
    assert_eq!(one.len(), 3 * 512);
    for (a, b) in one.iter().zip(&three) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("n_steps = \"many\"").unwrap();
        assert_eq!(tg_config_from_toml(bad.as_ptr(), &mut cfg), TgStatus::Config);
        assert!(cfg.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(tg_config_new(ptr::null_mut()), TgStatus::NullPointer);
        assert_eq!(tg_config_set_sites(ptr::null_mut(), 2), TgStatus::NullPointer);

        let cfg = small_config();
        assert_eq!(tg_config_set_sites(cfg, 0), TgStatus::Ok);
        let mut run = ptr::null_mut();
        assert_ne!(tg_run_emulated(cfg, 0.0, 125e6, &mut run), TgStatus::Ok);
        assert!(run.is_null());
        assert!(last_error().contains("n_sites"), "{}", last_error());
        tg_config_free(cfg);

        // A successful call clears the message.
        let mut ok = ptr::null_mut();
        assert_eq!(tg_config_new(&mut ok), TgStatus::Ok);
        assert_eq!(tg_last_error(ptr::null_mut(), 0), 0);
        tg_config_free(ok);
        tg_config_free(ptr::null_mut());
        tg_run_free(ptr::null_mut());
    }
}

#[test]
fn short_position_buffer_is_rejected() {
    unsafe {
        let cfg = small_config();
        assert_eq!(tg_config_set_steps(cfg, 0), TgStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(tg_run_emulated(cfg, 0.0, 125e6, &mut run), TgStatus::Ok, "{}", last_error());
        let mut xyz = vec![0.0; 10];
        assert_eq!(tg_run_positions(run, xyz.as_mut_ptr(), xyz.len()), TgStatus::BufferTooSmall);
        assert!(last_error().contains("need 1536"));
        tg_run_free(run);
        tg_config_free(cfg);
    }
}

#[test]
fn ewald_pair_forces_are_equal_and_opposite() {
    let xyz = [0.3, 0.5, 0.5, 0.6, 0.5, 0.5];
    let mass = [0.5, 0.5];
    let mut acc = [0.0; 6];
    unsafe { assert_eq!(tg_ewald_forces(xyz.as_ptr(), mass.as_ptr(), 2, 1e-3, acc.as_mut_ptr()), TgStatus::Ok) };
    assert!(acc[0] > 0.0 && acc[3] < 0.0);
    for k in 0..3 {
        assert!((acc[k] + acc[3 + k]).abs() <= 1e-12 * acc[0].abs());
    }
    assert_eq!(unsafe { tg_ewald_forces(ptr::null(), ptr::null(), 0, 1e-3, ptr::null_mut()) }, TgStatus::Ok);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/treegrid.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["tg_config_new", "tg_run_emulated", "tg_last_error", "TG_STATUS_OK", "typedef struct TgRun TgRun"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
