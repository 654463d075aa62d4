#ifndef TREEGRID_H
#define TREEGRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Ok` is zero; everything else is an error.
 */
typedef enum TgStatus {
  TG_STATUS_OK = 0,
  TG_STATUS_NULL_POINTER = 1,
  TG_STATUS_INVALID_UTF8 = 2,
  TG_STATUS_CONFIG = 3,
  TG_STATUS_RUN = 4,
  TG_STATUS_OUT_OF_RANGE = 5,
  TG_STATUS_BUFFER_TOO_SMALL = 6,
  TG_STATUS_PANIC = 7,
} TgStatus;

/**
 * Simulation configuration.
 */
typedef struct TgConfig TgConfig;

/**
 * Finished run: final particles, timings and summary.
 */
typedef struct TgRun TgRun;

/**
 * Rates of a finished run.
 */
typedef struct TgSummary {
  uint64_t steps;
  double wall_time_s;
  uint64_t total_interactions;
  double sustained_interactions_per_s;
  double peak_interactions_per_s;
} TgSummary;

/**
 * Library version as a static NUL-terminated string.
 */
const char *tg_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * without the terminator, or 0 if there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t tg_last_error(char *buf, size_t len);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum TgStatus tg_config_new(struct TgConfig **out);

/**
 * Parses a TOML configuration document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum TgStatus tg_config_from_toml(const char *toml, struct TgConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from `tg_config_new`/`tg_config_from_toml`
 * not yet freed.
 */
void tg_config_free(struct TgConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum TgStatus tg_config_set_particles(struct TgConfig *cfg, uint64_t n);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum TgStatus tg_config_set_sites(struct TgConfig *cfg, uint32_t n_sites);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum TgStatus tg_config_set_steps(struct TgConfig *cfg, size_t n_steps);

/**
 * Sets mesh cells per axis and rescales the force split to match.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum TgStatus tg_config_set_mesh(struct TgConfig *cfg, size_t mesh_size);

/**
 * Directory for timings and snapshots; null disables output.
 *
 * # Safety
 * `cfg` must be a live config handle; `dir` null or NUL-terminated.
 */
enum TgStatus tg_config_set_output_dir(struct TgConfig *cfg, const char *dir);

/**
 * Runs the configured simulation with every site on an in-process
 * emulated network.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be valid for writes.
 */
enum TgStatus tg_run_emulated(const struct TgConfig *cfg,
                              double latency_ms,
                              double bandwidth_bytes_per_s,
                              struct TgRun **out);

/**
 * # Safety
 * `run` must be null or a live run handle.
 */
void tg_run_free(struct TgRun *run);

/**
 * Number of particles in the final state; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live run handle.
 */
size_t tg_run_particle_count(const struct TgRun *run);

/**
 * Copies final positions (x, y, z per particle, sorted by id) into
 * `xyz`, which must hold `3 * count` doubles.
 *
 * # Safety
 * `run` must be a live run handle; `xyz` valid for `len` doubles.
 */
enum TgStatus tg_run_positions(const struct TgRun *run, double *xyz, size_t len);

/**
 * # Safety
 * `run` must be a live run handle; `out` valid for writes.
 */
enum TgStatus tg_run_summary(const struct TgRun *run, struct TgSummary *out);

/**
 * Force-phase seconds of step `step` (merged over sites).
 *
 * # Safety
 * `run` must be a live run handle; `out` valid for writes.
 */
enum TgStatus tg_run_step_force_seconds(const struct TgRun *run, size_t step, double *out);

/**
 * Periodic Ewald accelerations for `n` bodies in the unit box.
 * `xyz` and `accel` hold `3 * n` doubles, `mass` holds `n`.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum TgStatus tg_ewald_forces(const double *xyz,
                              const double *mass,
                              size_t n,
                              double eps,
                              double *accel);

#endif  /* TREEGRID_H */
