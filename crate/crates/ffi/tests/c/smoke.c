/* Exercises the C interface: load, info, predict, evaluate, errors. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "tla.h"

#define CHECK(cond)                                                     \
  do {                                                                  \
    if (!(cond)) {                                                      \
      fprintf(stderr, "check failed at line %d: %s\n", __LINE__, #cond); \
      return 1;                                                         \
    }                                                                   \
  } while (0)

int main(int argc, char **argv) {
  CHECK(argc == 3);
  CHECK(tla_abi_version() == TLA_ABI_VERSION);
  CHECK(strlen(tla_version()) > 0);

  TlaModel *bad = NULL;
  CHECK(tla_model_load("/nonexistent/model.tlc", &bad) == TLA_STATUS_IO);
  CHECK(bad == NULL);
  CHECK(tla_last_error() != NULL);

  TlaModel *m = NULL;
  CHECK(tla_model_load(argv[1], &m) == TLA_STATUS_OK);
  TlaModelInfo info;
  CHECK(tla_model_info(m, &info) == TLA_STATUS_OK);
  CHECK(info.num_classes == 3 && info.has_head == 1);

  int32_t cls = 7;
  double probs[3];
  CHECK(tla_model_predict(m, "thanks lovely wonderful", 0.0, &cls, probs, 3) == TLA_STATUS_OK);
  CHECK(cls >= 0 && cls < 3);
  CHECK(fabs(probs[0] + probs[1] + probs[2] - 1.0) < 1e-9);
  CHECK(tla_model_predict(m, "x", 1.5, &cls, NULL, 0) == TLA_STATUS_INVALID_ARGUMENT);
  CHECK(tla_model_predict(m, "x", 0.5, &cls, probs, 2) == TLA_STATUS_BUFFER_TOO_SMALL);

  TlaEvalSummary s;
  CHECK(tla_model_evaluate(m, argv[2], 0.0, &s) == TLA_STATUS_OK);
  CHECK(s.total == 60 && s.coverage == 1.0);

  double uncertain[3] = {0.4, 0.3, 0.3};
  CHECK(tla_classify_probs(uncertain, 3, 0.5, &cls) == TLA_STATUS_OK && cls == TLA_REJECTED);

  double v;
  TlaRegime r;
  CHECK(tla_scalar_recurrence(2.0, 1.0, 10, &v, &r) == TLA_STATUS_OK);
  CHECK(v == 1024.0 && r == TLA_REGIME_EXPLODES);

  tla_model_free(m);
  tla_model_free(NULL);
  printf("c smoke ok\n");
  return 0;
}
