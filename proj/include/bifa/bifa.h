#ifndef BIFA_BIFA_H
#define BIFA_BIFA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define BIFA_API __declspec(dllexport)
#else
#define BIFA_API __attribute__((visibility("default")))
#endif

typedef enum bifa_status {
  BIFA_OK = 0,
  BIFA_ERR_SCHEMA = 1,
  BIFA_ERR_PARSE = 2,
  BIFA_ERR_DIMENSION = 3,
  BIFA_ERR_DOMAIN = 4,
  BIFA_ERR_NUMERIC = 5,
  BIFA_ERR_GUARD = 6,
  BIFA_ERR_CONFIG = 7,
  BIFA_ERR_IO = 8,
  BIFA_ERR_ARGUMENT = 9, /* null handle or out-of-range index */
  BIFA_ERR_INTERNAL = 10
} bifa_status;

typedef enum bifa_quantity {
  BIFA_PHI = 0,          /* P x K_hat */
  BIFA_LAMBDA = 1,       /* P x J_s, per study */
  BIFA_PSI = 2,          /* P x 1, per study */
  BIFA_SIGMA_PHI = 3,    /* P x P */
  BIFA_SIGMA_LAMBDA = 4, /* P x P, per study */
  BIFA_SIGMA = 5         /* P x P, per study */
} bifa_quantity;

typedef struct bifa_options bifa_options;
typedef struct bifa_dataset bifa_dataset;
typedef struct bifa_fit bifa_fit;
typedef struct bifa_bench bifa_bench;

/* Return nonzero to stop the run; the call then fails with BIFA_ERR_INTERNAL. */
typedef int (*bifa_progress_fn)(long iteration, long total, void* user);

BIFA_API const char* bifa_version(void);
/* Message of the last failed call on this thread ("" if none). */
BIFA_API const char* bifa_last_error(void);
BIFA_API const char* bifa_status_name(bifa_status status);

/* Options: flat keys, "<method>.<key>" for method-scoped values. */
BIFA_API bifa_status bifa_options_create(bifa_options** out);
BIFA_API bifa_status bifa_options_set(bifa_options* opts, const char* key, const char* value);
/* Writes the value (or "" when unset) into buf; *needed gets the length plus one. */
BIFA_API bifa_status bifa_options_get(const bifa_options* opts, const char* key, char* buf, size_t cap,
                                      size_t* needed);
BIFA_API void bifa_options_free(bifa_options* opts);

/* Datasets. Row-major arrays, one per study, each rows[s] x vars. */
BIFA_API bifa_status bifa_dataset_from_arrays(size_t studies, const size_t* rows, size_t vars,
                                              const double* const* data, bifa_dataset** out);
BIFA_API bifa_status bifa_dataset_load(const char* const* paths, size_t n_paths, const char* const* covariate_paths,
                                       size_t n_covariates, bifa_dataset** out);
/* Centers and scales per the options (keys center, scale, log_offset). */
BIFA_API bifa_status bifa_dataset_preprocess(bifa_dataset* ds, const bifa_options* opts);
BIFA_API bifa_status bifa_dataset_dims(const bifa_dataset* ds, size_t* studies, size_t* vars);
BIFA_API bifa_status bifa_dataset_rows(const bifa_dataset* ds, size_t study, size_t* rows);
BIFA_API bifa_status bifa_dataset_save(const bifa_dataset* ds, const char* dir, const char* prefix);
BIFA_API void bifa_dataset_free(bifa_dataset* ds);

/* Generates a scenario and writes studyN.csv files plus truth matrices into dir. */
BIFA_API bifa_status bifa_simulate(int scenario, uint64_t seed, int mini, const char* dir);

/* Fits. `method` is one of stackfa, indfa, pfa, momss, sufa, bmsfa, tetris. */
BIFA_API bifa_status bifa_fit_run(const char* method, const bifa_dataset* ds, const bifa_options* opts,
                                  bifa_progress_fn progress, void* user, bifa_fit** out);
BIFA_API bifa_status bifa_fit_counts(const bifa_fit* fit, long* k_hat, size_t* studies);
/* J_s of the returned fit; -1 when the method has no study-specific part. */
BIFA_API bifa_status bifa_fit_study_count(const bifa_fit* fit, size_t study, long* j_hat);
/* Copies a matrix column-major into buf when cap suffices; rows and cols are always set. */
BIFA_API bifa_status bifa_fit_matrix(const bifa_fit* fit, bifa_quantity which, size_t study, double* buf, size_t cap,
                                     size_t* rows, size_t* cols);
/* JSON metadata owned by the fit. */
BIFA_API const char* bifa_fit_meta_json(const bifa_fit* fit);
/* CSV matrices plus meta.json into dir (created if needed). */
BIFA_API bifa_status bifa_fit_write(const bifa_fit* fit, const bifa_dataset* ds, const char* dir);
/* source,target,weight rows of |entry| >= threshold from BIFA_SIGMA_PHI or BIFA_SIGMA. */
BIFA_API bifa_status bifa_fit_write_edges(const bifa_fit* fit, const bifa_dataset* ds, bifa_quantity which,
                                          size_t study, double threshold, int correlation, const char* path);
BIFA_API void bifa_fit_free(bifa_fit* fit);

/* Scenario grid (keys scenarios, methods, reps, seed, mini, overspecified, mse, workers, out_dir). */
BIFA_API bifa_status bifa_bench_run(const bifa_options* opts, bifa_bench** out);
BIFA_API size_t bifa_bench_size(const bifa_bench* bench);
BIFA_API const char* bifa_bench_record_json(const bifa_bench* bench, size_t index);
/* "factor_counts", "accuracy" or "profile" as CSV text owned by the bench. */
BIFA_API const char* bifa_bench_table(const bifa_bench* bench, const char* name);
BIFA_API void bifa_bench_free(bifa_bench* bench);

#ifdef __cplusplus
}
#endif

#endif
