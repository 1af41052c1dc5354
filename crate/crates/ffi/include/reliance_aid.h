#ifndef RELIANCE_AID_H
#define RELIANCE_AID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum RaStatus {
  RA_OK = 0,
  RA_ERR_NULL_POINTER = 1,
  RA_ERR_INVALID_ARGUMENT = 2,
  RA_ERR_CONFIG = 3,
  RA_ERR_STATE = 4,
  RA_ERR_RUNTIME = 5,
  RA_ERR_PANIC = 6,
} RaStatus;

typedef enum RaPhase {
  RA_AWAITING_INITIAL = 0,
  RA_AWAITING_FINAL = 1,
  RA_FINISHED = 2,
} RaPhase;

/**
 * Opaque result of a population simulation.
 */
typedef struct RaAggregate RaAggregate;

/**
 * Opaque live session.
 */
typedef struct RaSession RaSession;

typedef struct RaCapability {
  double capability;
  double win_prob_a;
  double win_prob_b;
  double tie_prob;
  /**
   * 0 for A, 1 for B.
   */
  int32_t optimal;
} RaCapability;

typedef struct RaSuggestion {
  int32_t suggestion;
  bool agrees;
} RaSuggestion;

typedef struct RaTrialResult {
  double payoff;
  double foregone;
  bool reliance;
  bool ambiguous;
  bool rho;
  bool game_finished;
  enum RaPhase phase;
  double cumulative_reward;
} RaTrialResult;

typedef struct RaSummary {
  uint32_t operators;
  uint32_t games;
  double mean_reliance;
  double mean_rho;
  double mean_cumulative_reward;
} RaSummary;

typedef struct RaGameStats {
  double mean_reliance;
  double std_reliance;
  double mean_rho;
  double std_rho;
} RaGameStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *ra_last_error(void);

/**
 * Library version as a static string.
 */
const char *ra_version(void);

/**
 * Frees a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ra_string_free(char *s);

/**
 * Capability of the better option with `remaining` trials left, for
 * options `(high, low, p_high)`.
 */
enum RaStatus ra_capability(double high_a,
                            double low_a,
                            double p_high_a,
                            double high_b,
                            double low_b,
                            double p_high_b,
                            uint32_t remaining,
                            struct RaCapability *out);

/**
 * Creates a live session from a TOML config (null for defaults). With a
 * non-null `transcript_dir` the session writes `<id>.jsonl` there.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum RaStatus ra_session_new(const char *config_toml,
                             const char *session_id,
                             const char *transcript_dir,
                             struct RaSession **out);

/**
 * # Safety
 * `session` must be null or a handle from [`ra_session_new`] not yet freed.
 */
void ra_session_free(struct RaSession *session);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_session_phase(struct RaSession *session, enum RaPhase *out);

/**
 * Submits the unaided selection and returns the suggestion.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_session_initial(struct RaSession *session,
                                 int32_t selection,
                                 struct RaSuggestion *out);

/**
 * Submits the final decision and returns the realized trial.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_session_final(struct RaSession *session,
                               int32_t final_choice,
                               struct RaTrialResult *out);

/**
 * The session's completed trials as a JSON array, to be freed with
 * [`ra_string_free`].
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_session_trace_json(struct RaSession *session, char **out);

/**
 * Runs a population simulation from a TOML config (null for defaults).
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` must be writable.
 */
enum RaStatus ra_simulate(const char *config_toml, struct RaAggregate **out);

/**
 * # Safety
 * `agg` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_aggregate_summary(const struct RaAggregate *agg, struct RaSummary *out);

/**
 * Statistics of game `index` (0-based).
 *
 * # Safety
 * `agg` must be a live handle; `out` must be writable.
 */
enum RaStatus ra_aggregate_game(const struct RaAggregate *agg,
                                uint32_t index,
                                struct RaGameStats *out);

/**
 * # Safety
 * `agg` must be null or a handle from [`ra_simulate`] not yet freed.
 */
void ra_aggregate_free(struct RaAggregate *agg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELIANCE_AID_H */
