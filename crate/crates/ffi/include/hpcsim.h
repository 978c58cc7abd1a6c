#ifndef HPCSIM_H
#define HPCSIM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HpcsimStatus {
  HPCSIM_STATUS_OK = 0,
  HPCSIM_STATUS_NULL_ARGUMENT = 1,
  HPCSIM_STATUS_INVALID_UTF8 = 2,
  /**
   * Config failed to parse or validate.
   */
  HPCSIM_STATUS_INVALID_CONFIG = 3,
  HPCSIM_STATUS_IO = 4,
  /**
   * A trace file was malformed.
   */
  HPCSIM_STATUS_TRACE = 5,
  /**
   * The simulation itself rejected its inputs.
   */
  HPCSIM_STATUS_SIMULATION = 6,
  HPCSIM_STATUS_OUT_OF_RANGE = 7,
  HPCSIM_STATUS_WRONG_SCENARIO = 8,
  HPCSIM_STATUS_PANIC = 9,
} HpcsimStatus;

/**
 * A resolved scenario configuration.
 */
typedef struct HpcsimConfig HpcsimConfig;

/**
 * The manifest of a finished run.
 */
typedef struct HpcsimRun HpcsimRun;

/**
 * Per-pilot rows of a scaling scenario, kept in memory.
 */
typedef struct HpcsimScaling HpcsimScaling;

typedef struct HpcsimScalingRow {
  uint32_t pilot_nodes;
  uint32_t units_dispatched;
  uint32_t units_done;
  uint32_t generations;
  uint64_t pilot_duration_s;
  double mean_task_s;
  double overhead_s;
} HpcsimScalingRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. Borrowed;
 * valid until the next library call on the same thread.
 */
const char *hpcsim_last_error(void);

/**
 * Engine version string. Static; never free it.
 */
const char *hpcsim_version(void);

/**
 * # Safety
 * `s` is null or came from this library as an owned string and was not freed.
 */
void hpcsim_string_free(char *s);

/**
 * Built-in defaults for a scenario kind such as `"fleet"` or
 * `"weak_scaling"`.
 *
 * # Safety
 * `kind` is a NUL-terminated string; `out` is writable.
 */
enum HpcsimStatus hpcsim_config_defaults(const char *kind, struct HpcsimConfig **out);

/**
 * Load and validate a scenario file, following its `extends` chain.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum HpcsimStatus hpcsim_config_load(const char *path, struct HpcsimConfig **out);

/**
 * Parse and validate TOML text. Relative paths in it resolve against
 * `base_dir`, or the working directory when `base_dir` is null.
 *
 * # Safety
 * `text` is a NUL-terminated string, `base_dir` is null or one; `out` is
 * writable.
 */
enum HpcsimStatus hpcsim_config_parse(const char *text,
                                      const char *base_dir,
                                      struct HpcsimConfig **out);

/**
 * Overwrite one dotted key (`broker.n_brokers`) with a TOML value. The
 * result is not validated until `hpcsim_config_validate` or a run.
 *
 * # Safety
 * `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
 */
enum HpcsimStatus hpcsim_config_set(struct HpcsimConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` is a live handle.
 */
enum HpcsimStatus hpcsim_config_validate(const struct HpcsimConfig *cfg);

/**
 * Canonical TOML for the config. Owned; release with `hpcsim_string_free`.
 * Null when `cfg` is null.
 *
 * # Safety
 * `cfg` is null or a live handle.
 */
char *hpcsim_config_to_toml(const struct HpcsimConfig *cfg);

/**
 * # Safety
 * `cfg` is null or a handle from this library that was not yet freed.
 */
void hpcsim_config_free(struct HpcsimConfig *cfg);

/**
 * Run the scenario, writing its outputs and `manifest.json` under the
 * config's `output_dir`.
 *
 * # Safety
 * `cfg` is a live handle; `out` is writable.
 */
enum HpcsimStatus hpcsim_run(const struct HpcsimConfig *cfg, struct HpcsimRun **out);

/**
 * Scenario name of the run. Borrowed from `run`.
 *
 * # Safety
 * `run` is null or a live handle.
 */
const char *hpcsim_run_scenario(const struct HpcsimRun *run);

/**
 * Hex SHA-256 of the resolved config. Borrowed from `run`.
 *
 * # Safety
 * `run` is null or a live handle.
 */
const char *hpcsim_run_config_sha256(const struct HpcsimRun *run);

/**
 * Borrowed from `run`.
 *
 * # Safety
 * `run` is null or a live handle.
 */
const char *hpcsim_run_output_dir(const struct HpcsimRun *run);

/**
 * # Safety
 * `run` is null or a live handle.
 */
uint64_t hpcsim_run_seed(const struct HpcsimRun *run);

/**
 * # Safety
 * `run` is null or a live handle.
 */
size_t hpcsim_run_output_count(const struct HpcsimRun *run);

/**
 * File name and size of output `index`. The name is borrowed from `run`.
 *
 * # Safety
 * `run` is a live handle; `name` and `bytes` are each null or writable.
 */
enum HpcsimStatus hpcsim_run_output(const struct HpcsimRun *run,
                                    size_t index,
                                    const char **name,
                                    uint64_t *bytes);

/**
 * # Safety
 * `run` is null or a handle from this library that was not yet freed.
 */
void hpcsim_run_free(struct HpcsimRun *run);

/**
 * Run a scaling scenario in memory, writing nothing to disk.
 *
 * # Safety
 * `cfg` is a live handle; `out` is writable.
 */
enum HpcsimStatus hpcsim_scaling_run(const struct HpcsimConfig *cfg, struct HpcsimScaling **out);

/**
 * # Safety
 * `s` is null or a live handle.
 */
size_t hpcsim_scaling_len(const struct HpcsimScaling *s);

/**
 * # Safety
 * `s` is a live handle; `row` is writable.
 */
enum HpcsimStatus hpcsim_scaling_row(const struct HpcsimScaling *s,
                                     size_t index,
                                     struct HpcsimScalingRow *row);

/**
 * # Safety
 * `s` is null or a handle from this library that was not yet freed.
 */
void hpcsim_scaling_free(struct HpcsimScaling *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HPCSIM_H */
