#ifndef LPWA_SIM_H
#define LPWA_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LpwaStatus {
  LPWA_STATUS_OK = 0,
  LPWA_STATUS_NULL_POINTER = 1,
  LPWA_STATUS_INVALID_UTF8 = 2,
  LPWA_STATUS_CONFIG_ERROR = 3,
  LPWA_STATUS_SIMULATION_ERROR = 4,
  LPWA_STATUS_IO_ERROR = 5,
  LPWA_STATUS_OUT_OF_RANGE = 6,
  LPWA_STATUS_PANIC = 7,
} LpwaStatus;

/**
 * Experiment configuration handle.
 */
typedef struct LpwaConfig LpwaConfig;

/**
 * Finished run handle.
 */
typedef struct LpwaRun LpwaRun;

/**
 * Scalar results of a run. Undefined metrics are NaN.
 */
typedef struct LpwaSummary {
  double mean_e2e_delay_s;
  double delivery_ratio;
  uint64_t generated;
  uint64_t delivered;
  uint64_t dropped;
  uint64_t in_flight;
  uint32_t n_channels;
  uint64_t events_dispatched;
} LpwaSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lpwa_last_error(void);

/**
 * New config holding the defaults. Free with [`lpwa_config_free`].
 */
struct LpwaConfig *lpwa_config_new(void);

/**
 * Parses a TOML config; missing keys take their defaults.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LpwaStatus lpwa_config_from_toml(const char *text, struct LpwaConfig **out);

/**
 * Serializes the effective config. Free the string with
 * [`lpwa_string_free`].
 *
 * # Safety
 * `cfg` must come from this library; `out` must be a valid pointer.
 */
enum LpwaStatus lpwa_config_to_toml(const struct LpwaConfig *cfg, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void lpwa_string_free(char *s);

/**
 * # Safety
 * `cfg` must be null or come from this library, and not be used again.
 */
void lpwa_config_free(struct LpwaConfig *cfg);

/**
 * Sets the protocol by name: `"lpwa-mac"` or `"lorawan"`.
 *
 * # Safety
 * `cfg` must come from this library; `name` must be NUL-terminated.
 */
enum LpwaStatus lpwa_config_set_protocol(struct LpwaConfig *cfg, const char *name);

/**
 * # Safety
 * `cfg` must come from this library.
 */
enum LpwaStatus lpwa_config_set_seed(struct LpwaConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must come from this library.
 */
enum LpwaStatus lpwa_config_set_n_nodes(struct LpwaConfig *cfg, uint32_t n_nodes);

/**
 * Aggregate offered load in packets per second.
 *
 * # Safety
 * `cfg` must come from this library.
 */
enum LpwaStatus lpwa_config_set_network_load(struct LpwaConfig *cfg, double load);

/**
 * # Safety
 * `cfg` must come from this library.
 */
enum LpwaStatus lpwa_config_set_horizon_s(struct LpwaConfig *cfg, double horizon_s);

/**
 * Validates `cfg` and runs it to completion.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be a valid pointer.
 */
enum LpwaStatus lpwa_run(const struct LpwaConfig *cfg, struct LpwaRun **out);

/**
 * # Safety
 * `run` must come from [`lpwa_run`]; `out` must be a valid pointer.
 */
enum LpwaStatus lpwa_run_summary(const struct LpwaRun *run, struct LpwaSummary *out);

/**
 * Fraction of the horizon during which `channel` carried a frame.
 *
 * # Safety
 * `run` must come from [`lpwa_run`]; `out` must be a valid pointer.
 */
enum LpwaStatus lpwa_run_channel_utilization(const struct LpwaRun *run,
                                             uint32_t channel,
                                             double *out);

/**
 * Writes config.toml, packets.csv, summary.csv and, if `frame_log` is
 * set, frames.csv into `dir`, creating it if needed.
 *
 * # Safety
 * `run` must come from [`lpwa_run`]; `dir` must be NUL-terminated.
 */
enum LpwaStatus lpwa_run_write_csv(const struct LpwaRun *run, const char *dir, bool frame_log);

/**
 * # Safety
 * `run` must be null or come from [`lpwa_run`], and not be used again.
 */
void lpwa_run_free(struct LpwaRun *run);

/**
 * LoRa time on air in microseconds at 125 kHz, CR 4/5, 8 preamble
 * symbols, explicit header and CRC.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LpwaStatus lpwa_airtime_us(uint32_t payload_bytes, uint8_t spreading_factor, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LPWA_SIM_H */
