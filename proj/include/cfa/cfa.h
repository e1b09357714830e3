#ifndef CFA_H
#define CFA_H

/* C interface to the forecasting toolkit. Every function returns a status
 * code from the table below (0 on success); cfa_last_error() describes the
 * most recent failure on the calling thread. Handles are opaque and must be
 * released with their matching _free function. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CFA_API __declspec(dllexport)
#else
#define CFA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CFA_OK = 0,
  CFA_ERR_INTERNAL = 1, /* unexpected failure */
  CFA_ERR_CONFIG = 2,   /* bad config, bad data file, bad argument */
  CFA_ERR_TRAINING = 3, /* training diverged */
  CFA_ERR_EVAL = 4      /* undefined metric or missing model artifact */
};

CFA_API const char* cfa_version(void);

/* Message for the last failing call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread. */
CFA_API const char* cfa_last_error(void);

/* ------------------------------------------------------------------ */
/* Commands: one JSON config in, artifacts on disk out. These mirror the
 * command-line tool; the return value is the process exit code. */

typedef struct cfa_run_options {
  int has_seed;       /* nonzero: override the config seed */
  uint64_t seed;
  const char* out_dir; /* NULL: keep the config value */
  const char* ranges;  /* NULL: keep the config value; grid only, "lo:hi,..." */
  int jobs;            /* worker threads for grid; <= 0 means 1 */
  int overwrite;       /* nonzero: replace existing artifacts */
  int dump_keys;       /* nonzero: eval also writes keys.csv */
} cfa_run_options;

CFA_API int cfa_cmd_synth(const char* config_path, const cfa_run_options* opt);
CFA_API int cfa_cmd_train(const char* config_path, const cfa_run_options* opt);
CFA_API int cfa_cmd_eval(const char* config_path, const cfa_run_options* opt);
CFA_API int cfa_cmd_grid(const char* config_path, const cfa_run_options* opt);
CFA_API int cfa_cmd_probe(const char* config_path, const cfa_run_options* opt);

/* ------------------------------------------------------------------ */
/* Models */

typedef struct cfa_model cfa_model;

/* Loads a trained checkpoint. */
CFA_API int cfa_model_load(const char* path, cfa_model** out);
CFA_API void cfa_model_free(cfa_model* model);

/* "mean", "lstm" or "cfa"; valid while the handle lives. */
CFA_API const char* cfa_model_name(const cfa_model* model);

/* Forecasts `horizon` steps from a raw (unscaled) context of length n;
 * writes `horizon` raw values to out. n must be at least 4. */
CFA_API int cfa_model_forecast(const cfa_model* model, const double* context,
                               size_t n, size_t horizon, double* out);

/* Width of the model's context representation. */
CFA_API int cfa_model_representation_dim(const cfa_model* model);

/* Writes representation_dim values describing a raw context of length n. */
CFA_API int cfa_model_representation(const cfa_model* model,
                                     const double* context, size_t n,
                                     double* out, size_t out_len);

/* ------------------------------------------------------------------ */
/* Datasets */

typedef struct cfa_dataset cfa_dataset;

/* Opens a JSON-Lines dataset; per series the last tau_f values become the
 * test target and the preceding tau_c values its context. Pass 0 for either
 * length to derive it from the file's frequency tag (context 5x the nominal
 * period, forecast one period; H 24, D 7, M 12, Q 4). */
CFA_API int cfa_dataset_open_jsonl(const char* path, int tau_c, int tau_f,
                                   cfa_dataset** out);

/* Builds a dataset from a JSON data section, e.g.
 * {"kind": "synthetic", "p_min": 10, "p_max": 20, "n_series": 500,
 *  "n_train": 400, "seed": 7}. */
CFA_API int cfa_dataset_from_json(const char* json_text, cfa_dataset** out);

CFA_API void cfa_dataset_free(cfa_dataset* dataset);
CFA_API int cfa_dataset_n_test_windows(const cfa_dataset* dataset);

/* Rolls the model over every test window. nd_defined is 0 when the true
 * values sum to zero magnitude, in which case nd is not written. Output
 * pointers may be NULL when a value is not wanted. */
CFA_API int cfa_evaluate(const cfa_model* model, const cfa_dataset* dataset,
                         double* mse_scaled, double* nd, int* nd_defined);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CFA_H */
