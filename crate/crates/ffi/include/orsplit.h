#ifndef ORSPLIT_H
#define ORSPLIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OrsplitPolicy {
  ORSPLIT_POLICY_BOTTOM_MOST = 0,
  ORSPLIT_POLICY_TOP_MOST = 1,
  ORSPLIT_POLICY_RANDOM_RR = 2,
  ORSPLIT_POLICY_CENTRALIZED = 3,
} OrsplitPolicy;

typedef enum OrsplitStatus {
  ORSPLIT_STATUS_OK = 0,
  ORSPLIT_STATUS_NULL_ARGUMENT = 1,
  ORSPLIT_STATUS_INVALID_UTF8 = 2,
  ORSPLIT_STATUS_PARSE_ERROR = 3,
  ORSPLIT_STATUS_CONFIG_ERROR = 4,
  ORSPLIT_STATUS_RUN_ERROR = 5,
  ORSPLIT_STATUS_TIMEOUT = 6,
  ORSPLIT_STATUS_OUT_OF_RANGE = 7,
} OrsplitStatus;

typedef enum OrsplitStrategy {
  ORSPLIT_STRATEGY_HORIZONTAL = 0,
  ORSPLIT_STRATEGY_VERTICAL_ALTERNATE = 1,
  ORSPLIT_STRATEGY_VERTICAL_BLOCK = 2,
} OrsplitStrategy;

// A parsed program together with its query.
typedef struct OrsplitJob OrsplitJob;

// The outcome of one run.
typedef struct OrsplitReport OrsplitReport;

// Run settings. Start from `orsplit_config_default`.
typedef struct OrsplitConfig {
  uint32_t agents;
  // An `OrsplitPolicy` value.
  uint32_t policy;
  // An `OrsplitStrategy` value.
  uint32_t strategy;
  uint32_t threshold;
  uint32_t poll_frequency;
  // 0 leaves labels alone.
  uint32_t gc_invalidation_period;
  bool osc;
  bool incremental;
  bool first_solution;
  uint64_t seed;
  uint64_t reorder_window;
  // 0 means no limit beyond the library default.
  uint64_t time_limit_ms;
} OrsplitConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread. Valid until the next failing
// call on the same thread; never null.
const char *orsplit_last_error(void);

struct OrsplitConfig orsplit_config_default(void);

// Parses `program` and `query` into a new job stored in `*out`.
//
// # Safety
// `program` and `query` must be NUL-terminated strings and `out` a valid
// pointer.
enum OrsplitStatus orsplit_job_new(const char *program, const char *query, struct OrsplitJob **out);

// # Safety
// `job` must come from `orsplit_job_new` and not be freed twice.
void orsplit_job_free(struct OrsplitJob *job);

// Runs `job` under `config` and stores the report in `*out`.
//
// # Safety
// All pointers must be valid; `job` must be a live handle.
enum OrsplitStatus orsplit_run(const struct OrsplitJob *job,
                               const struct OrsplitConfig *config,
                               struct OrsplitReport **out);

// # Safety
// `report` must come from `orsplit_run` and not be freed twice.
void orsplit_report_free(struct OrsplitReport *report);

// # Safety
// `report` must be a live handle.
size_t orsplit_report_solution_count(const struct OrsplitReport *report);

// Copies solution `index`, in the order found, into a new string.
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum OrsplitStatus orsplit_report_solution(const struct OrsplitReport *report,
                                           size_t index,
                                           char **out);

// Side-effect output of the run as a new string, or null.
//
// # Safety
// `report` must be a live handle.
char *orsplit_report_output(const struct OrsplitReport *report);

// # Safety
// `report` must be a live handle.
size_t orsplit_report_sharings(const struct OrsplitReport *report);

// Total encoded bytes of the run's work replies.
//
// # Safety
// `report` must be a live handle.
size_t orsplit_report_share_bytes(const struct OrsplitReport *report);

// # Safety
// `report` must be a live handle.
bool orsplit_report_halted(const struct OrsplitReport *report);

// # Safety
// `s` must come from this library and not be freed twice.
void orsplit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORSPLIT_H */
