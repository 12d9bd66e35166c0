/* Compiled as C to keep the public header C-clean. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "cytoxai/cytoxai.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static int warnings = 0;
static void count_warning(const char* message, void* user) {
  (void)message;
  ++*(int*)user;
}

int main(int argc, char** argv) {
  const char* out_dir = argc > 1 ? argv[1] : "c_api_out";
  cx_session* s = NULL;
  cx_result* r = NULL;
  char hash[65];
  char other[65];
  const int64_t counts[5] = {815, 825, 795, 790, 835};

  EXPECT(strcmp(cx_version(), "") != 0);
  EXPECT(cx_session_open(NULL, NULL) == CX_E_ARGUMENT);
  EXPECT(strstr(cx_last_error(), "NULL") != NULL);
  EXPECT(cx_session_open("/definitely/missing.cfg", &s) == CX_E_IO);
  EXPECT(s == NULL);

  EXPECT(cx_session_open(NULL, &s) == CX_OK);
  EXPECT(strcmp(cx_last_error(), "") == 0);
  EXPECT(cx_session_config_hash(s, hash) == CX_OK);
  EXPECT(strlen(hash) == 64);
  EXPECT(cx_session_set(s, "train.epochs", "7") == CX_OK);
  EXPECT(cx_session_config_hash(s, other) == CX_OK);
  EXPECT(strcmp(hash, other) != 0);
  EXPECT(cx_session_set(s, "train.epoch", "7") == CX_E_CONFIG);
  EXPECT(strstr(cx_last_error(), "train.epoch") != NULL);
  EXPECT(cx_session_set(s, "train.epochs", "many") == CX_E_CONFIG);

  EXPECT(cx_session_describe(s, &r) == CX_OK);
  EXPECT(strstr(cx_result_text(r), "train.epochs = 7") != NULL);
  cx_result_free(r);

  EXPECT(cx_session_set(s, "output.dir", out_dir) == CX_OK);
  EXPECT(cx_session_set_command_line(s, "test_c_api") == CX_OK);
  EXPECT(cx_weights(s, counts, 5, NULL, NULL, &r) == CX_OK);
  EXPECT(strstr(cx_result_text(r), "0.9724550898203593") != NULL);
  EXPECT(cx_result_artifact_count(r) == 0);
  EXPECT(cx_result_artifact(r, 0) == NULL);
  cx_result_free(r);

  r = (cx_result*)0x1;
  EXPECT(cx_weights(s, counts, 3, NULL, NULL, &r) == CX_E_ARGUMENT);
  EXPECT(r == NULL);
  EXPECT(cx_evaluate(s, "/missing.cxwb", NULL, "holdout", NULL, &r) == CX_E_ARGUMENT);
  EXPECT(cx_prepare(s, NULL, &r) == CX_E_CONFIG);
  EXPECT(cx_explain(NULL, "a", "b", NULL, NULL, CX_CLASS_DEFAULT, NULL, &r) == CX_E_ARGUMENT);
  EXPECT(cx_report(s, NULL, 0, NULL, NULL, &r) == CX_E_ARGUMENT);

  cx_set_warning_handler(count_warning, &warnings);
  cx_set_warning_handler(NULL, NULL);

  EXPECT(cx_session_set(s, "train.epochs", "-1") == CX_OK);
  EXPECT(cx_weights(s, counts, 5, NULL, NULL, &r) == CX_E_CONFIG);

  EXPECT(strcmp(cx_status_name(CX_E_FETCH), "missing pretrained weights") == 0);
  cx_session_close(s);
  cx_session_close(NULL);
  cx_result_free(NULL);

  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  printf("c api: all checks passed\n");
  return 0;
}
