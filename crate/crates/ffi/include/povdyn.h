#ifndef POVDYN_H
#define POVDYN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PovdynStatus {
  POVDYN_STATUS_OK = 0,
  POVDYN_STATUS_INVALID_MATRIX = 1,
  POVDYN_STATUS_NON_DIAGONALIZABLE = 2,
  POVDYN_STATUS_NOT_EMBEDDABLE = 3,
  POVDYN_STATUS_NOT_IRREDUCIBLE = 4,
  POVDYN_STATUS_INVALID_DISTRIBUTION = 5,
  POVDYN_STATUS_INVALID_THRESHOLDS = 6,
  POVDYN_STATUS_INVALID_MOMENTS = 7,
  POVDYN_STATUS_UNSUPPORTED_ORDER = 8,
  POVDYN_STATUS_NEGATIVE_VARIANCE = 9,
  POVDYN_STATUS_NO_POOR_MASS = 10,
  POVDYN_STATUS_ZERO_POOR_INCOME = 11,
  POVDYN_STATUS_NEGATIVE_INCOME = 12,
  POVDYN_STATUS_NO_POOR = 13,
  POVDYN_STATUS_EMPTY_CROSS_SECTION = 14,
  POVDYN_STATUS_ZERO_INCOME_MASS = 15,
  POVDYN_STATUS_INCOMPLETE_PATH = 16,
  POVDYN_STATUS_EMPTY_ROW = 17,
  POVDYN_STATUS_INSUFFICIENT_CLASS_DATA = 18,
  POVDYN_STATUS_MISSING_THRESHOLD = 19,
  POVDYN_STATUS_EMPTY_COHORT = 20,
  POVDYN_STATUS_PARSE_ERROR = 21,
  POVDYN_STATUS_INVALID_PARAMETER = 22,
  POVDYN_STATUS_IO = 23,
  POVDYN_STATUS_JSON = 24,
  POVDYN_STATUS_NULL_POINTER = 100,
  POVDYN_STATUS_INVALID_UTF8 = 101,
  /**
   * The index is undefined at this `t` (no poor mass).
   */
  POVDYN_STATUS_UNDEFINED = 102,
  POVDYN_STATUS_PANIC = 255,
} PovdynStatus;

typedef enum PovdynIndexKind {
  POVDYN_INDEX_KIND_H = 0,
  POVDYN_INDEX_KIND_I = 1,
  POVDYN_INDEX_KIND_G = 2,
  POVDYN_INDEX_KIND_S = 3,
} PovdynIndexKind;

/**
 * Opaque fitted or user-specified model.
 */
typedef struct PovdynModel PovdynModel;

/**
 * One index at one time, with its asymptotic band.
 */
typedef struct PovdynIndexPoint {
  double t;
  double value;
  double variance;
  double ci_low;
  double ci_high;
} PovdynIndexPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on the same thread.
 */
const char *povdyn_last_error_message(void);

/**
 * Builds a model from JSON: either bare model parameters or a full
 * estimation report (as written by `povdyn estimate`).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum PovdynStatus povdyn_model_from_json(const char *json, struct PovdynModel **out);

/**
 * Replaces the index options of a model (JSON object; absent keys keep
 * their defaults).
 *
 * # Safety
 * `model` must come from [`povdyn_model_from_json`]; `json` NUL-terminated.
 */
enum PovdynStatus povdyn_model_set_options(struct PovdynModel *model, const char *json);

/**
 * # Safety
 * `model` must come from [`povdyn_model_from_json`] and not be used after.
 */
void povdyn_model_free(struct PovdynModel *model);

/**
 * Limit value, asymptotic variance and `1 − alpha` band for `n` agents.
 * Returns `Undefined` for I and G when the model has no poor mass at `t`.
 *
 * # Safety
 * `model` must be live; `out` must be writable.
 */
enum PovdynStatus povdyn_index_point(const struct PovdynModel *model,
                                     enum PovdynIndexKind kind,
                                     double t,
                                     double n,
                                     double alpha,
                                     struct PovdynIndexPoint *out);

/**
 * `exp(t·Λ)`.
 *
 * # Safety
 * `generator` points to 9 readable doubles, `out` to 9 writable ones.
 */
enum PovdynStatus povdyn_matrix_exp(const double *generator, double t, double *out);

/**
 * `log(P)/eta`.
 *
 * # Safety
 * `transition` points to 9 readable doubles, `out` to 9 writable ones.
 */
enum PovdynStatus povdyn_matrix_log_generator(const double *transition, double eta, double *out);

/**
 * # Safety
 * `generator` points to 9 readable doubles, `out` to 3 writable ones.
 */
enum PovdynStatus povdyn_stationary_distribution(const double *generator, double *out);

/**
 * # Safety
 * `low` and `high` must be writable.
 */
enum PovdynStatus povdyn_confidence_band(double value,
                                         double variance,
                                         double n,
                                         double alpha,
                                         double *low,
                                         double *high);

/**
 * Normal-approximation probability that the empirical index of `n` agents
 * lies in `[a, b]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PovdynStatus povdyn_prob_in_interval(double a,
                                          double b,
                                          double value,
                                          double variance,
                                          double n,
                                          double *out);

/**
 * Runs the file pipeline (panel CSV + threshold CSV) and returns the
 * estimation report as JSON. `options_json` may be null; it accepts the
 * cohort keys (`waves`, `base_year`, `base_components`, `extreme_fraction`,
 * `standardize`) and the estimation keys (`eta`, `window`,
 * `pair_denominator`) in one object. Free the result with
 * [`povdyn_string_free`].
 *
 * # Safety
 * Path arguments must be NUL-terminated; `out_json` must be writable.
 */
enum PovdynStatus povdyn_estimate_csv(const char *panel_path,
                                      const char *thresholds_path,
                                      const char *options_json,
                                      char **out_json);

/**
 * # Safety
 * `s` must come from this library (or be null).
 */
void povdyn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POVDYN_H */
