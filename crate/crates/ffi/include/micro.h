#ifndef MICRO_H
#define MICRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MicroStatus {
  MICRO_STATUS_OK = 0,
  MICRO_STATUS_NULL_POINTER = 1,
  MICRO_STATUS_INVALID_ARGUMENT = 2,
  MICRO_STATUS_IO = 3,
  MICRO_STATUS_RUNTIME = 4,
  MICRO_STATUS_BUFFER_TOO_SMALL = 5,
  MICRO_STATUS_PANIC = 6,
} MicroStatus;

/**
 * A trained agent loaded from a checkpoint.
 */
typedef struct MicroAgent MicroAgent;

/**
 * A pendulum instance.
 */
typedef struct MicroPendulum MicroPendulum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *micro_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the message length in
 * bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null.
 */
size_t micro_last_error(char *buf, size_t len);

/**
 * Loads an agent checkpoint written by `micro train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MicroStatus micro_agent_load(const char *path, struct MicroAgent **out);

/**
 * # Safety
 * `agent` must come from [`micro_agent_load`] or be null.
 */
void micro_agent_free(struct MicroAgent *agent);

/**
 * Observation width the agent expects, or 0 for a null handle.
 *
 * # Safety
 * `agent` must be a live handle or null.
 */
size_t micro_agent_obs_dim(const struct MicroAgent *agent);

/**
 * # Safety
 * `agent` must be a live handle or null.
 */
size_t micro_agent_act_dim(const struct MicroAgent *agent);

/**
 * Deterministic action for a raw (unnormalized) observation.
 *
 * # Safety
 * `obs` must hold `obs_len` values and `action` room for `action_len`.
 */
enum MicroStatus micro_agent_act(const struct MicroAgent *agent,
                                 const double *obs,
                                 size_t obs_len,
                                 double *action,
                                 size_t action_len);

/**
 * Mean and standard deviation of the deterministic policy's return on the
 * pendulum with the given gravity and friction multipliers.
 *
 * # Safety
 * `mean` and `std` must be writable.
 */
enum MicroStatus micro_agent_evaluate(const struct MicroAgent *agent,
                                      double gravity_mult,
                                      double friction_mult,
                                      size_t episodes,
                                      uint64_t seed,
                                      double *mean,
                                      double *std);

/**
 * # Safety
 * `out` must be writable.
 */
enum MicroStatus micro_pendulum_new(double gravity_mult,
                                    double friction_mult,
                                    struct MicroPendulum **out);

/**
 * # Safety
 * `env` must come from [`micro_pendulum_new`] or be null.
 */
void micro_pendulum_free(struct MicroPendulum *env);

/**
 * Number of observation values the pendulum produces.
 */
size_t micro_pendulum_obs_dim(void);

size_t micro_pendulum_act_dim(void);

/**
 * Random start state drawn from `seed`; writes the first observation.
 *
 * # Safety
 * `obs` must have room for `obs_len` values.
 */
enum MicroStatus micro_pendulum_reset(struct MicroPendulum *env,
                                      uint64_t seed,
                                      double *obs,
                                      size_t obs_len);

/**
 * Advances one step. `done` becomes 1 when the episode ended (terminal or
 * out of time).
 *
 * # Safety
 * Pointers must be valid for the given lengths; `reward` and `done` writable.
 */
enum MicroStatus micro_pendulum_step(struct MicroPendulum *env,
                                     const double *action,
                                     size_t action_len,
                                     double *obs,
                                     size_t obs_len,
                                     double *reward,
                                     int *done);

/**
 * W1 distance of two distributions on the states `0..n` of a line.
 *
 * # Safety
 * `p` and `q` must hold `n` values; `out` must be writable.
 */
enum MicroStatus micro_w1_distance(const double *p, const double *q, size_t n, double *out);

/**
 * `100·(score − random)/(expert − random)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MicroStatus micro_normalized_score(double score, double random, double expert, double *out);

/**
 * Runs the tabular property suite on every fixture of `dir`. `pairs = 0`
 * keeps the default pair count. `passed` becomes 1 when every fixture
 * passed; failures are described by [`micro_last_error`] while the call
 * still returns `MICRO_STATUS_OK`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `passed` writable.
 */
enum MicroStatus micro_verify_tabular(const char *dir, size_t pairs, uint64_t seed, int *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICRO_H */
