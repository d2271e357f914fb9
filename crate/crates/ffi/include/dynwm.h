#ifndef DYNWM_H
#define DYNWM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum DwStatus {
  DW_STATUS_OK = 0,
  DW_STATUS_NULL_POINTER = 1,
  DW_STATUS_INVALID_UTF8 = 2,
  DW_STATUS_PARSE = 3,
  DW_STATUS_VALIDATION = 4,
  DW_STATUS_INVALID_PARAMETER = 5,
  DW_STATUS_NUMERICAL = 6,
  DW_STATUS_ATTACK = 7,
  DW_STATUS_IO = 8,
  DW_STATUS_TRACE_FORMAT = 9,
  DW_STATUS_BUFFER_TOO_SMALL = 10,
  DW_STATUS_PANIC = 99,
} DwStatus;

/**
 * Recorded signals that can be copied out of a run.
 */
typedef enum DwSignal {
  DW_SIGNAL_STATE = 0,
  DW_SIGNAL_OUTPUT = 1,
  DW_SIGNAL_REPORTED = 2,
  DW_SIGNAL_INPUT = 3,
  DW_SIGNAL_POLICY_INPUT = 4,
  DW_SIGNAL_EXCITATION = 5,
} DwSignal;

/**
 * A completed simulation run with its detector output.
 */
typedef struct DwRun DwRun;

/**
 * A parsed and validated scenario.
 */
typedef struct DwScenario DwScenario;

/**
 * Scalar summary of a run. Absent times are reported as -1.
 */
typedef struct DwReport {
  uint64_t horizon;
  int64_t onset;
  double distortion_power;
  double distortion_power_after_onset;
  double ms_x;
  double ms_z;
  uint64_t windows_evaluated;
  int64_t first_alarm;
  int64_t first_alarm_after_onset;
  int64_t delay;
  uint64_t false_alarms_before_onset;
} DwReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next `dw_*` call on this thread.
 */
const char *dw_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dw_version(void);

/**
 * Parses a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DwStatus dw_scenario_from_toml(const char *toml, struct DwScenario **out);

/**
 * Reads and parses a TOML scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DwStatus dw_scenario_from_path(const char *path, struct DwScenario **out);

/**
 * Checks a TOML scenario without keeping it. Validation failures list every
 * offending field in the error message.
 *
 * # Safety
 * `toml` must be a NUL-terminated string.
 */
enum DwStatus dw_scenario_validate(const char *toml);

/**
 * Simulation horizon of a scenario, or 0 for a null handle.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
uint64_t dw_scenario_horizon(const struct DwScenario *scenario);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void dw_scenario_free(struct DwScenario *scenario);

/**
 * Calibrates the detector, simulates the scenario with `seed` and evaluates it.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DwStatus dw_run(const struct DwScenario *scenario, uint64_t seed, struct DwRun **out);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum DwStatus dw_run_report(const struct DwRun *run, struct DwReport *out);

/**
 * The full run report as a NUL-terminated JSON string. Release it with
 * [`dw_string_free`].
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum DwStatus dw_run_report_json(const struct DwRun *run, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void dw_string_free(char *s);

/**
 * Copies a recorded signal, row-major (`rows * cols` values).
 *
 * `buf` may be null to query the shape; otherwise it must hold `cap` values
 * and [`DwStatus::BufferTooSmall`] is returned if that is not enough.
 *
 * # Safety
 * `run` must be a live handle; `rows` and `cols` valid pointers; `buf` null
 * or valid for `cap` writes.
 */
enum DwStatus dw_run_signal(const struct DwRun *run,
                            enum DwSignal which,
                            double *buf,
                            size_t cap,
                            size_t *rows,
                            size_t *cols);

/**
 * Writes the run's trace as CSV.
 *
 * # Safety
 * `run` must be a live handle and `path` a NUL-terminated string.
 */
enum DwStatus dw_run_export_trace(const struct DwRun *run, const char *path);

/**
 * Scenario the run was produced from, serialized back to TOML. Release it
 * with [`dw_string_free`].
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum DwStatus dw_run_scenario_toml(const struct DwRun *run, char **out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void dw_run_free(struct DwRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNWM_H */
