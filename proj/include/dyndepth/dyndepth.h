/* C interface to the dyndepth library. */
#ifndef DYNDEPTH_H
#define DYNDEPTH_H

#include <stddef.h>
#include <stdint.h>

#if defined(DYNDEPTH_BUILDING_LIBRARY)
#define DD_API __attribute__((visibility("default")))
#else
#define DD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dd_status {
  DD_OK = 0,
  DD_ERR_INPUT = 2,      /* invalid arguments, files or configuration */
  DD_ERR_DIVERGED = 3,   /* numeric divergence during training */
  DD_ERR_NUMERIC = 4,    /* non-finite values outside training */
  DD_ERR_INTERNAL = 5
} dd_status;

/* Message describing the last failure on the calling thread ("" if none). */
DD_API const char* dd_last_error(void);
DD_API const char* dd_version(void);
/* Frees strings returned by the library. */
DD_API void dd_free(char* p);

/* Writes the synthetic cube dataset. spec_json may be NULL for defaults. */
DD_API dd_status dd_generate_cube(const char* spec_json, const char* out_dir);

typedef struct dd_dataset dd_dataset;

DD_API dd_status dd_dataset_open(const char* dir, dd_dataset** out);
DD_API void dd_dataset_close(dd_dataset* ds);
DD_API int dd_dataset_frame_count(const dd_dataset* ds);
DD_API int dd_dataset_width(const dd_dataset* ds);
DD_API int dd_dataset_height(const dd_dataset* ds);

typedef struct dd_train_options {
  const char* mode; /* full | analytic_baseline | no_prior | static_mask */
  int epochs;
  int warmup_epochs;
  double alpha;
  double beta;
  double gamma;
  double lr_depth;
  double lr_sceneflow;
  uint64_t seed;
  int unnormalized_losses;
  int bands;
  int hidden_layers;
  int hidden_width;
  int resume;
  int verbose; /* per-epoch progress on stderr */
} dd_train_options;

/* Fills the defaults. */
DD_API void dd_train_options_init(dd_train_options* opts);

DD_API dd_status dd_train(const char* dataset_dir, const char* out_dir,
                          const dd_train_options* opts);

/* Metrics JSON of a run against a dataset's ground truth; region is
 * "all", "static" or "dynamic". Free *json_out with dd_free. */
DD_API dd_status dd_evaluate(const char* run_dir, const char* gt_dataset_dir,
                             const char* region, char** json_out);

/* kind: "pointcloud" (frame index), "xt_slice" (row index) or "sceneflow"
 * (frame index). */
DD_API dd_status dd_export(const char* run_dir, const char* kind, int index,
                           const char* out_path);

#ifdef __cplusplus
}
#endif

#endif /* DYNDEPTH_H */
