#ifndef FIBER_DPG_H
#define FIBER_DPG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdStatus {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_UTF8 = 2,
  FD_STATUS_CONFIG = 3,
  FD_STATUS_IO = 4,
  FD_STATUS_NUMERICAL = 5,
  FD_STATUS_OUT_OF_RANGE = 6,
  FD_STATUS_BUFFER_TOO_SMALL = 7,
  FD_STATUS_PANIC = 8,
} FdStatus;

/**
 * Opaque run configuration.
 */
typedef struct FdConfig FdConfig;

/**
 * Opaque result of one study.
 */
typedef struct FdReport FdReport;

/**
 * Reduced power model of a co-propagating pair.
 */
typedef struct FdPair {
  double omega_s;
  double omega_p;
  double coupling;
} FdPair;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fd_version(void);

/**
 * Copy the last error message of this thread into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null; `needed` may be null.
 */
enum FdStatus fd_last_error(char *buf, size_t len, size_t *needed);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`fd_config_free`].
 */
enum FdStatus fd_config_default(struct FdConfig **out);

/**
 * Parse a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FdStatus fd_config_from_toml(const char *toml, struct FdConfig **out);

/**
 * Read a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FdStatus fd_config_load(const char *path, struct FdConfig **out);

/**
 * Set the output directory of a configuration.
 *
 * # Safety
 * `cfg` must be a live handle and `dir` a NUL-terminated string.
 */
enum FdStatus fd_config_set_output_dir(struct FdConfig *cfg, const char *dir);

/**
 * Serialize a configuration back to TOML.
 *
 * # Safety
 * `cfg` must be a live handle; see [`fd_last_error`] for the buffer contract.
 */
enum FdStatus fd_config_to_toml(const struct FdConfig *cfg, char *buf, size_t len, size_t *needed);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards. Null is ignored.
 */
void fd_config_free(struct FdConfig *cfg);

/**
 * Resolve and run the configured study. With `write` nonzero the tables and
 * manifest are written to the configured output directory.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer; the report is released with [`fd_report_free`].
 */
enum FdStatus fd_run(const struct FdConfig *cfg,
                     int32_t write,
                     struct FdReport **out);

/**
 * JSON form of a report.
 *
 * # Safety
 * `report` must be a live handle; see [`fd_last_error`] for the buffer contract.
 */
enum FdStatus fd_report_json(const struct FdReport *report, char *buf, size_t len, size_t *needed);

/**
 * Number of power stations carried by a report (0 for studies without one).
 *
 * # Safety
 * `report` must be a live handle or null.
 */
size_t fd_report_power_len(const struct FdReport *report);

/**
 * Station `i` of the power trace.
 *
 * # Safety
 * `report` must be a live handle; the output pointers must be valid.
 */
enum FdStatus fd_report_power_at(const struct FdReport *report,
                                 size_t i,
                                 double *z,
                                 double *p_signal,
                                 double *p_pump);

/**
 * # Safety
 * `report` must come from this library and not be used afterwards. Null is ignored.
 */
void fd_report_free(struct FdReport *report);

/**
 * Closed-form powers at distance z from launch powers (ps0, pp0).
 *
 * # Safety
 * `ps` and `pp` must be valid pointers.
 */
enum FdStatus fd_oracle_closed_form(struct FdPair pair,
                                    double ps0,
                                    double pp0,
                                    double z,
                                    double *ps,
                                    double *pp);

/**
 * RK4 end powers over [0, length] with `steps` uniform steps.
 *
 * # Safety
 * `ps` and `pp` must be valid pointers.
 */
enum FdStatus fd_oracle_integrate(struct FdPair pair,
                                  double ps0,
                                  double pp0,
                                  double length,
                                  size_t steps,
                                  double *ps,
                                  double *pp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIBER_DPG_H */
