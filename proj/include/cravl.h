/*
 * cravl — C API for the content-rating vision-language toolkit.
 *
 * All functions return a cravl_status; on failure, cravl_last_error() holds
 * a thread-local message describing what went wrong. Strings returned
 * through out-parameters are heap-allocated and must be released with
 * cravl_free(). The cravl_model handle is opaque; it owns a loaded model
 * checkpoint plus (optionally) a classifier head, and is safe to share
 * across threads for read-only operations once fully constructed.
 */
#ifndef CRAVL_H
#define CRAVL_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cravl_status {
  CRAVL_OK = 0,
  CRAVL_E_USAGE = 1,   /* bad arguments or configuration */
  CRAVL_E_DATA = 2,    /* missing or malformed inputs */
  CRAVL_E_NUMERIC = 3  /* non-finite loss or other numeric failure */
} cravl_status;

const char* cravl_version(void);

/* Thread-local message for the most recent failure; empty string if none. */
const char* cravl_last_error(void);

void cravl_free(char* ptr);

/* ------------------------------------------------------------------ */
/* One-shot pipeline stages                                            */
/* ------------------------------------------------------------------ */

/* Writes <out_dir>/train and <out_dir>/test datasets plus a config echo.
 * seed_override < 0 keeps the seeds from the config file. */
cravl_status cravl_gen_data(const char* config_path, const char* out_dir, int64_t seed_override);

cravl_status cravl_pretrain_text(const char* config_path, const char* data_dir,
                                 const char* out_ckpt, int64_t seed_override);

/* Exactly one of text_ckpt (path), random_frozen != 0, or resume_ckpt (path)
 * selects how the frozen text encoder is obtained. NULL/empty strings mean
 * "not given". */
cravl_status cravl_train(const char* config_path, const char* data_dir, const char* out_ckpt,
                         const char* text_ckpt, int random_frozen, const char* resume_ckpt,
                         int64_t seed_override);

cravl_status cravl_train_head(const char* config_path, const char* model_ckpt,
                              const char* data_dir, const char* out_head, int64_t seed_override);

/* data_dir may be NULL; when given, predictions must reference apps that
 * exist in its manifest. */
cravl_status cravl_audit(const char* predictions_path, const char* data_dir, const char* out_json,
                         int min_severity);

cravl_status cravl_deletion_rates(const char* predictions_path, const char* data_dir,
                                  const char* out_csv);

/* Metrics JSON for a confusion-matrix file (bare 5x5 array or {"counts"}). */
cravl_status cravl_metrics(const char* cm_path, char** out_json);

/* Finite-difference check of the training objective. ckpt_path NULL or empty
 * checks a fresh toy-dimension model. */
cravl_status cravl_grad_check(const char* ckpt_path, double h, int samples, uint64_t seed,
                              double lambda, double* out_max_rel_err);

/* ------------------------------------------------------------------ */
/* Model handle                                                        */
/* ------------------------------------------------------------------ */

typedef struct cravl_model cravl_model;

cravl_status cravl_model_open(const char* ckpt_path, cravl_model** out_model);
void cravl_model_close(cravl_model* model);

cravl_status cravl_model_load_head(cravl_model* model, const char* head_ckpt);

/* Requires a loaded head. Writes JSONL rows app_id/declared/votes/majority,
 * one per app, in manifest order regardless of thread count. */
cravl_status cravl_model_predict(cravl_model* model, const char* data_dir, const char* out_jsonl,
                                 int threads);

/* First-layer-style cross-attention inspection: JSON rankings plus one PPM
 * heatmap per region. regions is a semicolon-separated list of
 * comma-separated patch indices ("0,1,8;62,63") and may be NULL. */
cravl_status cravl_model_viz_attention(cravl_model* model, const char* data_dir,
                                       const char* app_id, int image_index, const char* regions,
                                       int k, int head, int layer, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* CRAVL_H */
