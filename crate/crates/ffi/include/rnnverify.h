#ifndef RNNVERIFY_H
#define RNNVERIFY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RvStatus {
  RvStatus_Ok = 0,
  RvStatus_NullPointer = 1,
  RvStatus_InvalidUtf8 = 2,
  RvStatus_Parse = 3,
  RvStatus_InvalidArgument = 4,
  RvStatus_Verification = 5,
  RvStatus_Panic = 6,
} RvStatus;

typedef enum RvMode {
  RvMode_Auto = 0,
  RvMode_Alg1 = 1,
  RvMode_Alg2 = 2,
  RvMode_Milp = 3,
  RvMode_Incremental = 4,
} RvMode;

typedef enum RvVerdict {
  RvVerdict_Holds = 0,
  RvVerdict_Violated = 1,
  RvVerdict_Unknown = 2,
  RvVerdict_Error = 3,
} RvVerdict;

/**
 * A recurrent network.
 */
typedef struct RvNetwork RvNetwork;

/**
 * A network bound to a property.
 */
typedef struct RvQuery RvQuery;

/**
 * The outcome of a verification run.
 */
typedef struct RvReport RvReport;

/**
 * Pipeline settings; start from [`rv_options_default`].
 */
typedef struct RvOptions {
  double epsilon;
  size_t max_refinements;
  enum RvMode mode;
  /**
   * Seconds; zero or negative means no budget.
   */
  double time_budget_secs;
  uint64_t seed;
} RvOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *rv_last_error(void);

/**
 * Library version as a static string.
 */
const char *rv_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void rv_string_free(char *s);

/**
 * Parses a network file.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum RvStatus rv_network_parse(const char *text, struct RvNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from [`rv_network_parse`].
 */
void rv_network_free(struct RvNetwork *net);

/**
 * # Safety
 * `net` must be a valid handle.
 */
size_t rv_network_input_dim(const struct RvNetwork *net);

/**
 * # Safety
 * `net` must be a valid handle.
 */
size_t rv_network_output_dim(const struct RvNetwork *net);

/**
 * Runs the network on `steps` input vectors stored row by row in `inputs`
 * (`steps * input_dim` values) and writes the outputs of every step to
 * `outputs` (`steps * output_dim` values).
 *
 * # Safety
 * The buffers must hold the stated number of values.
 */
enum RvStatus rv_network_evaluate(const struct RvNetwork *net,
                                  const double *inputs,
                                  size_t steps,
                                  double *outputs,
                                  size_t outputs_len);

/**
 * Binds a property file to a copy of `net`.
 *
 * # Safety
 * `net` must be a valid handle, `property` a nul-terminated string and
 * `out` a valid pointer.
 */
enum RvStatus rv_query_new(const struct RvNetwork *net, const char *property, struct RvQuery **out);

/**
 * # Safety
 * `q` must be null or a handle from [`rv_query_new`].
 */
void rv_query_free(struct RvQuery *q);

struct RvOptions rv_options_default(void);

/**
 * Verifies `q`. `opts` may be null for defaults.
 *
 * # Safety
 * `q` must be a valid handle, `opts` null or valid, `out` a valid pointer.
 */
enum RvStatus rv_verify(const struct RvQuery *q,
                        const struct RvOptions *opts,
                        struct RvReport **out);

/**
 * # Safety
 * `r` must be a valid handle.
 */
enum RvVerdict rv_report_verdict(const struct RvReport *r);

/**
 * Machine-readable report; release with [`rv_string_free`]. Null on a null
 * handle.
 *
 * # Safety
 * `r` must be a valid handle.
 */
char *rv_report_json(const struct RvReport *r);

/**
 * Human-readable report; release with [`rv_string_free`].
 *
 * # Safety
 * `r` must be a valid handle.
 */
char *rv_report_text(const struct RvReport *r);

/**
 * # Safety
 * `r` must be null or a handle from [`rv_verify`].
 */
void rv_report_free(struct RvReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RNNVERIFY_H */
