#ifndef CYTOXAI_H
#define CYTOXAI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CX_API __attribute__((visibility("default")))
#else
#define CX_API
#endif

typedef enum cx_status {
  CX_OK = 0,
  /* Bad argument: unknown name, out-of-range value, NULL handle. */
  CX_E_ARGUMENT = 1,
  /* Malformed configuration, dataset layout or inconsistent inputs. */
  CX_E_CONFIG = 2,
  CX_E_IO = 3,
  /* Pretrained weights are not available locally. */
  CX_E_FETCH = 4,
  CX_E_RUNTIME = 5
} cx_status;

/* Passed as class_index to cx_explain: use the configured default. */
#define CX_CLASS_DEFAULT (-2)
/* Passed as class_index to cx_explain: explain the predicted class. */
#define CX_CLASS_PREDICTED (-1)

/* A run configuration plus the command line recorded in the run log. */
typedef struct cx_session cx_session;
/* Text summary and artifact paths of one command. */
typedef struct cx_result cx_result;

CX_API const char* cx_version(void);
CX_API const char* cx_status_name(cx_status status);
/* Message of the last failing call on this thread; "" if none. */
CX_API const char* cx_last_error(void);

typedef void (*cx_warning_fn)(const char* message, void* user);
/* NULL restores the default (stderr). */
CX_API void cx_set_warning_handler(cx_warning_fn fn, void* user);

/* config_path NULL or "" gives the defaults. */
CX_API cx_status cx_session_open(const char* config_path, cx_session** out);
CX_API void cx_session_close(cx_session* session);
/* Same keys and value syntax as the config file. Values are type-checked here;
   the whole config is validated when a command runs. */
CX_API cx_status cx_session_set(cx_session* session, const char* key, const char* value);
CX_API cx_status cx_session_set_command_line(cx_session* session, const char* command_line);
/* NULL or "": <output dir>/run_log.jsonl. */
CX_API cx_status cx_session_set_run_log(cx_session* session, const char* path);
/* Writes 64 hex digits and a terminating NUL. */
CX_API cx_status cx_session_config_hash(const cx_session* session, char out[65]);
/* The fully defaulted config as text, in cx_result_text. */
CX_API cx_status cx_session_describe(const cx_session* session, cx_result** out);

/* Commands. Optional path arguments may be NULL or "". Each successful
   command appends one record to the run log. */
CX_API cx_status cx_prepare(cx_session* session, const char* manifest_out, cx_result** out);
CX_API cx_status cx_analyze_sizes(cx_session* session, const char* out_path, cx_result** out);
/* counts (n_counts == 5, class order) take precedence over the manifest. */
CX_API cx_status cx_weights(cx_session* session, const int64_t* counts, size_t n_counts, const char* manifest,
                            const char* out_path, cx_result** out);
CX_API cx_status cx_train(cx_session* session, const char* manifest, const char* run_dir, cx_result** out);
/* split: "train", "val" or "test" (NULL: test). */
CX_API cx_status cx_evaluate(cx_session* session, const char* checkpoint, const char* manifest, const char* split,
                             const char* out_dir, cx_result** out);
/* method: gradcam, gradcampp, scorecam, layercam or lime (NULL: configured). */
CX_API cx_status cx_explain(cx_session* session, const char* checkpoint, const char* image, const char* method,
                            const char* layer, int class_index, const char* out_dir, cx_result** out);
/* names may be NULL; otherwise n_metrics entries. */
CX_API cx_status cx_report(cx_session* session, const char* const* metrics, size_t n_metrics,
                           const char* const* names, const char* out_prefix, cx_result** out);

CX_API const char* cx_result_text(const cx_result* result);
CX_API const char* cx_result_dataset_hash(const cx_result* result);
CX_API size_t cx_result_artifact_count(const cx_result* result);
/* NULL when index is out of range. */
CX_API const char* cx_result_artifact(const cx_result* result, size_t index);
CX_API void cx_result_free(cx_result* result);

#ifdef __cplusplus
}
#endif

#endif
