#ifndef LATCO_H
#define LATCO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum LatcoStatus {
  LATCO_STATUS_OK = 0,
  LATCO_STATUS_NULL_POINTER = 1,
  LATCO_STATUS_INVALID_UTF8 = 2,
  LATCO_STATUS_CONFIG = 3,
  LATCO_STATUS_DIMENSION = 4,
  LATCO_STATUS_NUMERICAL = 5,
  LATCO_STATUS_IO = 6,
  LATCO_STATUS_BUFFER_TOO_SMALL = 7,
  LATCO_STATUS_EPISODE_DONE = 8,
  LATCO_STATUS_PANIC = 9,
  LATCO_STATUS_OTHER = 10,
} LatcoStatus;

typedef enum LatcoCommand {
  LATCO_COMMAND_PLAN = 0,
  LATCO_COMMAND_TRAIN = 1,
  LATCO_COMMAND_BENCH_SOLVER = 2,
} LatcoCommand;

/**
 * Environment instance.
 */
typedef struct LatcoEnv LatcoEnv;

/**
 * Parsed experiment config.
 */
typedef struct LatcoExperiment LatcoExperiment;

/**
 * Configured planner.
 */
typedef struct LatcoPlanner LatcoPlanner;

/**
 * Scalar results of one planning call.
 */
typedef struct LatcoPlanSummary {
  double planned_return;
  double max_violation;
  size_t iterations;
} LatcoPlanSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *latco_last_error_message(void);

void latco_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *latco_version(void);

/**
 * Parses a JSON experiment config.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LatcoStatus latco_experiment_parse(const char *json, struct LatcoExperiment **out);

/**
 * # Safety
 * `cfg` must come from [`latco_experiment_parse`] or be NULL.
 */
void latco_experiment_free(struct LatcoExperiment *cfg);

/**
 * Runs the experiment. `out_dir` overrides the configured output
 * directory when not NULL.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or NUL-terminated.
 */
enum LatcoStatus latco_experiment_run(const struct LatcoExperiment *cfg,
                                      enum LatcoCommand command,
                                      const char *out_dir);

/**
 * Creates an environment from a descriptor: a bare name such as
 * `"lottery"` or an object such as `{"name": "pointmass", "d": 1.5}`.
 *
 * # Safety
 * `descriptor` must be NUL-terminated JSON and `out` a valid pointer.
 */
enum LatcoStatus latco_env_new(const char *descriptor, struct LatcoEnv **out);

/**
 * # Safety
 * `env` must come from [`latco_env_new`] or be NULL.
 */
void latco_env_free(struct LatcoEnv *env);

/**
 * # Safety
 * All pointers must be valid.
 */
enum LatcoStatus latco_env_dims(const struct LatcoEnv *env,
                                size_t *state_dim,
                                size_t *action_dim,
                                double *action_bound);

/**
 * Resets and writes the initial state into `state` (length `len`).
 *
 * # Safety
 * `env` must be a live handle and `state` point to `len` doubles.
 */
enum LatcoStatus latco_env_reset(struct LatcoEnv *env, uint64_t seed, double *state, size_t len);

/**
 * Applies one action (`action_len` doubles) and writes the next state,
 * reward and done flag.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum LatcoStatus latco_env_step(struct LatcoEnv *env,
                                const double *action,
                                size_t action_len,
                                double *state,
                                size_t state_len,
                                double *reward,
                                bool *done);

/**
 * Creates a planner by name (`latco`, `latco_gaussian`, `cem`, `mppi`,
 * `shooting_gd`, `shooting_gn`, `ilqr`) with optional JSON overrides
 * (NULL for defaults).
 *
 * # Safety
 * `name` must be NUL-terminated, `overrides` NULL or NUL-terminated, and
 * `out` a valid pointer.
 */
enum LatcoStatus latco_planner_new(const char *name,
                                   const char *overrides,
                                   struct LatcoPlanner **out);

/**
 * # Safety
 * `planner` must come from [`latco_planner_new`] or be NULL.
 */
void latco_planner_free(struct LatcoPlanner *planner);

/**
 * Plans `horizon` actions from the environment's current state with its
 * ground-truth models. Actions are written time-major into `actions`
 * (`horizon · action_dim` doubles). `summary` may be NULL.
 *
 * # Safety
 * Handles must be live and `actions` point to `len` doubles.
 */
enum LatcoStatus latco_plan(const struct LatcoPlanner *planner,
                            const struct LatcoEnv *env,
                            size_t horizon,
                            uint64_t seed,
                            double *actions,
                            size_t len,
                            struct LatcoPlanSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATCO_H */
