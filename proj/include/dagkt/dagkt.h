#ifndef DAGKT_DAGKT_H
#define DAGKT_DAGKT_H

/* C interface to the dagkt knowledge-tracing library.
 *
 * Every function returns a dagkt_status. On failure, dagkt_last_error()
 * describes the problem for the calling thread. Strings returned through
 * `char**` out-parameters are owned by the caller and released with
 * dagkt_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(DAGKT_BUILDING_LIBRARY)
#define DAGKT_API __attribute__((visibility("default")))
#else
#define DAGKT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dagkt_status {
  DAGKT_OK = 0,
  DAGKT_ERR_ARGUMENT = 1,   /* null handle, bad config value */
  DAGKT_ERR_PARSE = 2,      /* malformed CSV/JSONL/TSV input */
  DAGKT_ERR_VALIDATION = 3, /* well-formed but inconsistent input */
  DAGKT_ERR_RUNTIME = 4,    /* divergence, checkpoint/graph mismatch, internal */
  DAGKT_ERR_IO = 5          /* file could not be read or written */
} dagkt_status;

typedef struct dagkt_dataset dagkt_dataset;
typedef struct dagkt_graph dagkt_graph;

DAGKT_API const char* dagkt_version(void);
DAGKT_API const char* dagkt_last_error(void);
DAGKT_API void dagkt_string_free(char* s);

/* Datasets. `mapping_json` may be NULL for the ASSISTments column names. */
DAGKT_API dagkt_status dagkt_dataset_parse_csv(const char* path, const char* mapping_json,
                                               dagkt_dataset** out);
DAGKT_API dagkt_status dagkt_dataset_load(const char* path, dagkt_dataset** out);
DAGKT_API dagkt_status dagkt_dataset_save(const dagkt_dataset* ds, const char* path);
DAGKT_API dagkt_status dagkt_dataset_stats_json(const dagkt_dataset* ds, char** out_json);
DAGKT_API size_t dagkt_dataset_students(const dagkt_dataset* ds);
DAGKT_API void dagkt_dataset_free(dagkt_dataset* ds);

/* Writes per-question difficulty and per-(student, question, occurrence)
 * attempt tables as TSV. Either path may be NULL. */
DAGKT_API dagkt_status dagkt_dataset_save_tables(const dagkt_dataset* ds, const char* difficulty_path,
                                                 const char* attempts_path);

/* Synthetic corpora. `spec_json` may be NULL for defaults; `truth_json`
 * receives planted pairs, difficulties and abilities when non-NULL. */
DAGKT_API dagkt_status dagkt_synthesize(const char* spec_json, uint64_t seed, dagkt_dataset** out,
                                        char** truth_json);

/* Question-KC graphs. */
DAGKT_API dagkt_status dagkt_graph_build(const dagkt_dataset* ds, double omega, double lambda,
                                         uint32_t min_support, dagkt_graph** out);
DAGKT_API dagkt_status dagkt_graph_load(const char* path, dagkt_graph** out);
/* `note` (may be NULL) is written as a header comment and is not hashed. */
DAGKT_API dagkt_status dagkt_graph_save(const dagkt_graph* g, const char* path, const char* note);
DAGKT_API dagkt_status dagkt_graph_hash(const dagkt_graph* g, char** out_hex);
DAGKT_API size_t dagkt_graph_similarity_edges(const dagkt_graph* g);
DAGKT_API size_t dagkt_graph_question_kc_edges(const dagkt_graph* g);
/* The omega, lambda and min_support the graph was built with. Any out
 * pointer may be NULL. */
DAGKT_API dagkt_status dagkt_graph_params(const dagkt_graph* g, double* omega, double* lambda,
                                          uint32_t* min_support);
DAGKT_API void dagkt_graph_free(dagkt_graph* g);

/* Training. `config_json` is a training config object (may be NULL). With
 * `graph` non-NULL its omega/lambda/min_support override the config; fold
 * graphs are always rebuilt from each fold's training students. Writes
 * metrics.jsonl, report.json and fold_<k>/ under `output_dir` (may be NULL).
 * `report_json` receives the cross-validation report. */
DAGKT_API dagkt_status dagkt_train_cv(const dagkt_dataset* ds, const dagkt_graph* graph,
                                      const char* config_json, const char* output_dir, char** report_json);

/* Scores `ds` with the checkpoint in `checkpoint_dir`; `graph` must be the
 * one the checkpoint was trained on. */
DAGKT_API dagkt_status dagkt_evaluate(const char* checkpoint_dir, const dagkt_graph* graph,
                                      const dagkt_dataset* ds, char** report_json);

/* Runs cross validation for each comma-separated variant (R, D, A, DA, G,
 * full) and returns the AUC table. */
DAGKT_API dagkt_status dagkt_ablate(const dagkt_dataset* ds, const char* config_json, const char* variants,
                                    char** table_json);

DAGKT_API dagkt_status dagkt_sha256_file(const char* path, char** out_hex);

#ifdef __cplusplus
}
#endif

#endif
