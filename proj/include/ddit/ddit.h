#ifndef DDIT_DDIT_H
#define DDIT_DDIT_H

/* C interface to the dual-stream diffusion transformer toolkit.
 * Every call returns a ddit_status; on failure ddit_last_error() describes
 * the problem (thread-local, valid until the next failing call). Strings
 * returned through char** are heap-allocated; release them with
 * ddit_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(DDIT_BUILDING_LIBRARY)
#define DDIT_API __attribute__((visibility("default")))
#else
#define DDIT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes. */
typedef enum ddit_status {
  DDIT_OK = 0,
  DDIT_ERR_INTERNAL = 1,
  DDIT_ERR_USAGE = 2,   /* bad arguments or configuration */
  DDIT_ERR_DATA = 3,    /* missing, malformed or mismatched inputs */
  DDIT_ERR_NUMERIC = 4  /* non-finite values during training or sampling */
} ddit_status;

typedef struct ddit_config ddit_config;
typedef struct ddit_checkpoint ddit_checkpoint;

DDIT_API const char* ddit_version(void);
DDIT_API const char* ddit_last_error(void);
DDIT_API void ddit_string_free(char* s);

/* ---- run configuration ---------------------------------------------- */

/* Presets: "toy", "paper-profile". */
DDIT_API ddit_status ddit_config_new(const char* preset, ddit_config** out);
DDIT_API void ddit_config_free(ddit_config* cfg);
/* Applies an INI file; unknown sections or keys are usage errors. */
DDIT_API ddit_status ddit_config_load(ddit_config* cfg, const char* path);
/* key is "section.name", e.g. "train.base_lr". */
DDIT_API ddit_status ddit_config_set(ddit_config* cfg, const char* key, const char* value);
DDIT_API ddit_status ddit_config_get(const ddit_config* cfg, const char* key, char** value);
DDIT_API ddit_status ddit_config_to_ini(const ddit_config* cfg, char** text);
DDIT_API ddit_status ddit_config_validate(const ddit_config* cfg);
/* Closed-form learnable scalar count of the model section. */
DDIT_API ddit_status ddit_count_parameters(const ddit_config* cfg, int64_t* count);

/* ---- dataset ---------------------------------------------------------- */

DDIT_API ddit_status ddit_gen_data(int64_t n, uint64_t seed, const char* out_dir, int size);

/* ---- training ----------------------------------------------------------- */

typedef void (*ddit_progress_fn)(int64_t step, int64_t total, double loss, double smoothed, double lr, void* user);

typedef struct ddit_train_options {
  const char* out_dir;     /* required */
  const char* resume;      /* checkpoint directory or NULL */
  int64_t stop_at_step;    /* <= 0: run to the end */
  int progress_every;      /* steps between progress callbacks, <= 0 disables */
  ddit_progress_fn progress;
  void* user;
} ddit_train_options;

typedef struct ddit_train_result {
  int64_t final_step;
  double final_smoothed_loss;
} ddit_train_result;

DDIT_API ddit_status ddit_train(const ddit_config* cfg, const ddit_train_options* opts, ddit_train_result* result);

/* ---- checkpoints -------------------------------------------------------- */

DDIT_API ddit_status ddit_checkpoint_open(const char* dir, ddit_checkpoint** out);
DDIT_API void ddit_checkpoint_free(ddit_checkpoint* ck);
DDIT_API int64_t ddit_checkpoint_step(const ddit_checkpoint* ck);
/* Copy of the checkpoint's configuration. */
DDIT_API ddit_status ddit_checkpoint_config(const ddit_checkpoint* ck, ddit_config** out);

/* ---- sampling ----------------------------------------------------------- */

typedef struct ddit_sample_options {
  const char* condition_png; /* paletted mask or bilevel sketch */
  const char* modality;      /* "mask" or "sketch" */
  const char* caption;       /* whitespace separated tokens, "" = null caption */
  const char* sampler;       /* "ddpm", "ddim" or "euler" */
  double cfg_scale;
  int steps;
  double eta;
  uint64_t seed;
  int grid;                  /* number of seeds tiled into the output, >= 1 */
  int use_ema;
  const char* out_png;
} ddit_sample_options;

DDIT_API void ddit_sample_options_init(ddit_sample_options* o);
DDIT_API ddit_status ddit_sample(const ddit_checkpoint* ck, const ddit_sample_options* opts);

/* ---- evaluation --------------------------------------------------------- */

typedef struct ddit_eval_report {
  double ssim;
  double pixel_accuracy;
  double miou;
  int n_samples;
} ddit_eval_report;

typedef struct ddit_eval_options {
  const char* data_dir;
  int64_t n;
  const char* sampler;
  double cfg_scale;
  int steps;
  double eta;
  uint64_t seed;
  int use_ema;
  const char* report_path; /* key = value file, may be NULL */
  const char* rows_csv;    /* per-sample rows appended, may be NULL */
} ddit_eval_options;

DDIT_API void ddit_eval_options_init(ddit_eval_options* o);
DDIT_API ddit_status ddit_eval(const ddit_checkpoint* ck, const ddit_eval_options* opts, ddit_eval_report* report);

/* ---- inspection --------------------------------------------------------- */

/* Parameter count, configuration, step and per-tensor shapes. `ck` may be
 * NULL, in which case the layout of `cfg` is described without weights. */
DDIT_API ddit_status ddit_inspect(const ddit_checkpoint* ck, const ddit_config* cfg, char** text);

#ifdef __cplusplus
}
#endif

#endif /* DDIT_DDIT_H */
