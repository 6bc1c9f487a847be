/*
 * C interface to the m3net few-shot matching library.
 *
 * Every function returns an m3_status; on failure a description is available
 * from m3_last_error() until the next call on the same thread. Handles are
 * opaque and owned by the caller, who releases them with the matching
 * *_destroy function. Strings returned through char** are released with
 * m3_string_free.
 */
#ifndef M3NET_M3NET_H_
#define M3NET_M3NET_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(M3NET_BUILDING_LIBRARY)
#    define M3NET_API __declspec(dllexport)
#  else
#    define M3NET_API __declspec(dllimport)
#  endif
#else
#  define M3NET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum m3_status {
  M3_OK = 0,
  M3_ERR_INVALID_ARGUMENT = 1,
  M3_ERR_IO = 2,
  M3_ERR_BAD_MAGIC = 3,
  M3_ERR_UNSUPPORTED_VERSION = 4,
  M3_ERR_TRUNCATED_RECORD = 5,
  M3_ERR_SHAPE_MISMATCH = 6,
  M3_ERR_INSUFFICIENT_CLASSES = 7,
  M3_ERR_INSUFFICIENT_CLIPS = 8,
  M3_ERR_TOO_FEW_ORDERINGS = 9,
  M3_ERR_UNKNOWN_CLASS = 10,
  M3_ERR_BAD_GRID = 11,
  M3_ERR_ZERO_NORM_FRAME = 12,
  M3_ERR_EPISODE_SIZE_MISMATCH = 13,
  M3_ERR_LABEL_OUT_OF_RANGE = 14,
  M3_ERR_NON_POSITIVE_TEMPERATURE = 15,
  M3_ERR_CONFIG = 16,
  M3_ERR_CHECK_FAILED = 17,
  M3_ERR_INTERNAL = 99
} m3_status;

typedef struct m3_config m3_config;
typedef struct m3_dataset m3_dataset;
typedef struct m3_model m3_model;
typedef struct m3_match_result m3_match_result;

M3NET_API const char* m3_last_error(void);
M3NET_API const char* m3_status_name(m3_status status);
M3NET_API void m3_string_free(char* s);

/* ---- run configuration ------------------------------------------------- */

M3NET_API m3_status m3_config_create(m3_config** out);
M3NET_API m3_status m3_config_grad_check_preset(m3_config** out);
M3NET_API m3_status m3_config_load(const char* path, m3_config** out);
M3NET_API m3_status m3_config_parse(const char* text, m3_config** out);
/* Sets one key from text. Unknown keys fail with M3_ERR_CONFIG. */
M3NET_API m3_status m3_config_set(m3_config* config, const char* key, const char* value);
M3NET_API m3_status m3_config_get(const m3_config* config, const char* key, char** value);
M3NET_API m3_status m3_config_validate(const m3_config* config);
M3NET_API m3_status m3_config_to_string(const m3_config* config, char** text);
M3NET_API void m3_config_destroy(m3_config* config);

/* ---- feature archives ------------------------------------------------- */

/* Renders the synthetic bank described by the config (all splits). */
M3NET_API m3_status m3_dataset_generate(const m3_config* config, m3_dataset** out);
M3NET_API m3_status m3_dataset_load(const char* path, m3_dataset** out);
M3NET_API m3_status m3_dataset_save(const m3_dataset* dataset, const char* path);
M3NET_API size_t m3_dataset_clip_count(const m3_dataset* dataset);
/* dims receives t, h, w, c of the clips (zeros for an empty dataset). */
M3NET_API m3_status m3_dataset_shape(const m3_dataset* dataset, int dims[4]);
M3NET_API m3_status m3_dataset_clip_info(const m3_dataset* dataset, size_t index,
                                         uint32_t* class_id, uint32_t* clip_id);
M3NET_API void m3_dataset_destroy(m3_dataset* dataset);

/* ---- model checkpoints ------------------------------------------------ */

M3NET_API m3_status m3_model_init(const m3_config* config, m3_model** out);
M3NET_API m3_status m3_model_load(const char* path, m3_model** out);
M3NET_API m3_status m3_model_save(const m3_model* model, const char* path);
M3NET_API size_t m3_model_tensor_count(const m3_model* model);
/* name stays valid for the lifetime of the model; dims[0] x dims[1] is the
 * stored matrix shape (1 x n for vectors, 1 x 1 for scalars). */
M3NET_API m3_status m3_model_tensor_info(const m3_model* model, size_t index, const char** name,
                                         int* rank, size_t dims[2]);
M3NET_API size_t m3_model_param_count(const m3_model* model);
M3NET_API void m3_model_destroy(m3_model* model);

/* ---- training and evaluation ------------------------------------------ */

typedef void (*m3_log_fn)(const char* line, void* user);

/* Trains from scratch. Writes the selected checkpoint to checkpoint_path and
 * the latest one to checkpoint_path + ".last". trace_path may be NULL; when
 * set it receives one "episode_index, lr, l1, l2, l3, total" line per episode. */
M3NET_API m3_status m3_train(const m3_config* config, const char* checkpoint_path,
                             const char* trace_path, m3_log_fn log, void* user);

typedef struct m3_eval_report {
  double mean_accuracy;
  double ci95_halfwidth;
  int n_episodes;
  double per_branch_accuracy[3];
} m3_eval_report;

/* Evaluates on the config's test split. records_path may be NULL; when set it
 * receives one tab-separated line per query:
 * episode_seed, query_index, y1, y2, y3, y, predicted, true. */
M3NET_API m3_status m3_evaluate(const m3_config* config, const char* checkpoint_path,
                                int n_episodes, const char* records_path, m3_eval_report* out);

/* Finite-difference check of the analytic gradients; report receives one
 * "name relative_error" line per tensor. Fails with M3_ERR_CHECK_FAILED when
 * any error reaches 1e-4. */
M3NET_API m3_status m3_grad_check(const m3_config* config, double* max_error, char** report);

/* ---- pairwise matching ------------------------------------------------ */

enum {
  M3_BRANCH_D1 = 0, /* instance-specific distances */
  M3_BRANCH_D2 = 1, /* category-specific distances */
  M3_BRANCH_D3 = 2, /* task-specific distances */
  M3_BRANCH_Y1 = 3,
  M3_BRANCH_Y2 = 4,
  M3_BRANCH_Y3 = 5,
  M3_BRANCH_Y = 6 /* fused scores */
};

/* Scores one query clip against support clips named by clip id. Supports are
 * grouped by class (ascending class id); every class needs the same shot
 * count and the support count must equal the model's N*K. config may be
 * NULL for defaults; only temperature and the switches are read from it. */
M3NET_API m3_status m3_match(const m3_model* model, const m3_dataset* dataset,
                             const m3_config* config, uint32_t query_clip_id,
                             const uint32_t* support_clip_ids, size_t n_support,
                             m3_match_result** out);
M3NET_API size_t m3_match_result_n_way(const m3_match_result* result);
M3NET_API uint32_t m3_match_result_class_id(const m3_match_result* result, size_t index);
/* Copies min(n_way, capacity) values of the requested vector into values. */
M3NET_API m3_status m3_match_result_values(const m3_match_result* result, int which,
                                           double* values, size_t capacity);
M3NET_API int m3_match_result_predicted(const m3_match_result* result);
M3NET_API void m3_match_result_destroy(m3_match_result* result);

/* ---- inspection ------------------------------------------------------- */

/* Human-readable summary of an archive or a checkpoint (chosen by magic). */
M3NET_API m3_status m3_inspect(const char* path, char** summary);

#ifdef __cplusplus
}
#endif

#endif /* M3NET_M3NET_H_ */
