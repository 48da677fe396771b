#ifndef ROADTRAIN_H
#define ROADTRAIN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  RT_STATUS_INVALID_CONFIG = 2,
  RT_STATUS_INVALID_ARGUMENT = 3,
  RT_STATUS_ILLEGAL_STATE = 4,
  RT_STATUS_UNKNOWN_NODE = 5,
  RT_STATUS_BUFFER_TOO_SMALL = 6,
  RT_STATUS_FINISHED = 7,
  RT_STATUS_DECODE_FAILED = 8,
  RT_STATUS_PANIC = 9,
} RtStatus;

typedef enum RtMode {
  RT_MODE_RBA = 0,
  RT_MODE_MPR = 1,
} RtMode;

typedef enum RtVerb {
  RT_VERB_JOIN = 0,
  RT_VERB_LEAVE = 1,
  RT_VERB_PAUSE = 2,
  RT_VERB_RESUME = 3,
} RtVerb;

/**
 * Opaque simulation handle.
 */
typedef struct RtSimulation RtSimulation;

/**
 * Run measures. `avg_latency_ms` is negative when no round trip was measured.
 */
typedef struct RtReport {
  uint32_t n_vehicles;
  double avg_latency_ms;
  double throughput_bps;
  double loss_rate;
  uint64_t total_tx;
  double duration_s;
} RtReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a scenario with default settings apart from the given ones.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum RtStatus rt_sim_new(enum RtMode mode,
                         uint32_t n_followers,
                         uint64_t duration_s,
                         uint64_t seed,
                         struct RtSimulation **out);

/**
 * Creates a scenario from TOML text using the scenario file field names.
 *
 * # Safety
 * `toml` must be a nul-terminated string; `out` as for [`rt_sim_new`].
 */
enum RtStatus rt_sim_new_from_toml(const char *toml, struct RtSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must come from one of the constructors and not be used afterwards.
 */
void rt_sim_free(struct RtSimulation *sim);

/**
 * Advances up to `ms` milliseconds. Returns `Finished` once the end is reached.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum RtStatus rt_sim_step(struct RtSimulation *sim, uint64_t ms);

/**
 * Current virtual time, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t rt_sim_now_ms(const struct RtSimulation *sim);

/**
 * Operator command. `node` is ignored for PAUSE and RESUME.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum RtStatus rt_sim_command(struct RtSimulation *sim, enum RtVerb verb, uint16_t node);

/**
 * Runs to the end and fills `out` with the report.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum RtStatus rt_sim_run_to_end(struct RtSimulation *sim, struct RtReport *out);

/**
 * Report for the run so far.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum RtStatus rt_sim_report(const struct RtSimulation *sim, struct RtReport *out);

/**
 * Copies the snapshot JSON, nul-terminated, into `buf`. `needed` receives the
 * size including the terminator; with a short buffer nothing is written but
 * `needed` and `BufferTooSmall` is returned.
 *
 * # Safety
 * `sim` must be a live handle; `buf` must have `len` writable bytes or be null
 * with `len` zero; `needed` may be null.
 */
enum RtStatus rt_sim_snapshot_json(const struct RtSimulation *sim,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

/**
 * Checks one datagram. On success `kind` receives the packet kind byte.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `kind` may be null.
 */
enum RtStatus rt_packet_validate(const uint8_t *bytes, size_t len, uint8_t *kind);

/**
 * Message for the calling thread's last failure, copied as for
 * [`rt_sim_snapshot_json`]. Empty when nothing failed yet.
 *
 * # Safety
 * As for [`rt_sim_snapshot_json`].
 */
enum RtStatus rt_last_error(char *buf, size_t len, size_t *needed);

/**
 * Library version, a static nul-terminated string.
 */
const char *rt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROADTRAIN_H */
