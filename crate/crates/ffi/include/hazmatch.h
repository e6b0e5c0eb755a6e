#ifndef HAZMATCH_H
#define HAZMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HM_MASK_SOFTWARE 1

#define HM_MASK_ASYMPTOTIC (1 << 1)

#define HM_MASK_NAIVE_BOOTSTRAP (1 << 2)

#define HM_MASK_DOUBLE_RESAMPLING (1 << 3)

#define HM_MASK_ALL 15

// Result of every fallible call.
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_IO = 3,
  HM_STATUS_INVALID_DATA = 4,
  HM_STATUS_SEPARATION = 5,
  HM_STATUS_NUMERICAL = 6,
  HM_STATUS_NOT_AVAILABLE = 7,
  HM_STATUS_PANIC = 99,
} HmStatus;

// Variance method selector.
typedef enum HmMethod {
  HM_METHOD_SOFTWARE = 0,
  HM_METHOD_ASYMPTOTIC = 1,
  HM_METHOD_NAIVE_BOOTSTRAP = 2,
  HM_METHOD_DOUBLE_RESAMPLING = 3,
} HmMethod;

// Opaque dataset.
typedef struct HmDataset HmDataset;

// Opaque result of [`hm_estimate`].
typedef struct HmReport HmReport;

// Analysis settings. Start from [`hm_options_default`].
typedef struct HmOptions {
  // Bitwise OR of `HM_MASK_*`.
  uint32_t methods;
  // Bootstrap replicates; at least 100 when a bootstrap method is requested.
  size_t b;
  double alpha;
  uint64_t seed;
} HmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next call into this library from the same thread.
const char *hm_last_error(void);

// Library version as a static string.
const char *hm_version(void);

// Build a dataset from column arrays. `x` is row-major `n x d`; `treated`
// and `event` hold 0 or 1.
//
// # Safety
// Every array must hold the stated number of elements and `out` must be
// writable.
enum HmStatus hm_dataset_from_arrays(size_t n,
                                     size_t d,
                                     const double *x,
                                     const uint8_t *treated,
                                     const double *time,
                                     const uint8_t *event,
                                     struct HmDataset **out);

// Read a dataset from CSV. NULL column names select `w`, `u` and `delta`;
// every other column is a covariate.
//
// # Safety
// String arguments must be NUL-terminated or NULL; `out` must be writable.
enum HmStatus hm_dataset_from_csv(const char *path,
                                  const char *col_w,
                                  const char *col_time,
                                  const char *col_event,
                                  struct HmDataset **out);

// Number of subjects; 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t hm_dataset_len(const struct HmDataset *ds);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void hm_dataset_free(struct HmDataset *ds);

// All four methods, `B = 1000`, `alpha = 0.05`, seed 0.
struct HmOptions hm_options_default(void);

// Fit the matching estimator with the requested variance methods.
//
// # Safety
// `ds` must be a live dataset handle, `opts` NULL (defaults) or readable,
// and `out` writable.
enum HmStatus hm_estimate(const struct HmDataset *ds,
                          const struct HmOptions *opts,
                          struct HmReport **out);

// Estimated log hazard ratio.
//
// # Safety
// `r` must be a live report handle and `beta` writable.
enum HmStatus hm_report_beta(const struct HmReport *r, double *beta);

// Variance and `(1 - alpha)` interval for the log hazard ratio.
// [`HmStatus::NotAvailable`] when the method was not requested.
//
// # Safety
// `r` must be a live report handle; the output pointers must be writable.
enum HmStatus hm_report_interval(const struct HmReport *r,
                                 enum HmMethod method,
                                 double *variance,
                                 double *lower,
                                 double *upper);

// The full report as pretty-printed JSON. Release with [`hm_string_free`].
//
// # Safety
// `r` must be a live report handle and `json` writable.
enum HmStatus hm_report_json(const struct HmReport *r, char **json);

// # Safety
// `r` must be NULL or a handle not yet freed.
void hm_report_free(struct HmReport *r);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void hm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAZMATCH_H */
