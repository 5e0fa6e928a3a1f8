#ifndef PEDFAIR_H
#define PEDFAIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_ARGUMENT = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_LOAD = 3,
  PF_STATUS_VALIDATION = 4,
  PF_STATUS_IO = 5,
  PF_STATUS_UNDEFINED = 6,
  PF_STATUS_PANIC = 7,
} PfStatus;

/*
 Loaded ground truth plus detections.
 */
typedef struct PfCorpus PfCorpus;

/*
 Finished evaluation in JSON and text form.
 */
typedef struct PfReport PfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *pf_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

/*
 Loads a ground-truth file and a detection file.
 */
enum PfStatus pf_corpus_load(const char *ground_truth_path,
                             const char *detections_path,
                             struct PfCorpus **out);

void pf_corpus_free(struct PfCorpus *corpus);

size_t pf_corpus_image_count(const struct PfCorpus *corpus);

size_t pf_corpus_annotation_count(const struct PfCorpus *corpus);

size_t pf_corpus_detection_count(const struct PfCorpus *corpus);

/*
 Number of records skipped while loading.
 */
size_t pf_corpus_diagnostic_count(const struct PfCorpus *corpus);

/*
 Runs an evaluation described by a JSON run configuration. Paths inside the
 configuration are ignored; the corpus handle supplies the data.
 */
enum PfStatus pf_evaluate(const struct PfCorpus *corpus,
                          const char *config_json,
                          struct PfReport **out);

/*
 Report as JSON. Owned by the report handle.
 */
const char *pf_report_json(const struct PfReport *report);

/*
 Report as plain-text tables. Owned by the report handle.
 */
const char *pf_report_text(const struct PfReport *report);

void pf_report_free(struct PfReport *report);

/*
 IoU of two `[x, y, width, height]` boxes.
 */
enum PfStatus pf_iou(const double *a, const double *b, double *out);

enum PfStatus pf_average_recall(size_t n_tp, size_t n_fn, double *out);

enum PfStatus pf_average_precision(size_t n_tp, size_t n_fp, double *out);

/*
 2-Wasserstein distance between two empirical samples.
 */
enum PfStatus pf_wasserstein2(const double *a,
                              size_t a_len,
                              const double *b,
                              size_t b_len,
                              double *out);

/*
 Largest and smallest pairwise gap among `len` group values.
 */
enum PfStatus pf_disparity(const double *values, size_t len, double *out_worst, double *out_best);

/*
 Darkens an 8-bit buffer in place.
 */
enum PfStatus pf_darken_rgb8(uint8_t *data, size_t len, double factor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEDFAIR_H */
