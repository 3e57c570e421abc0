/* C interface to the few-shot embedding adaptation library.
 *
 * All functions return fsl_status; FSL_OK is 0. Objects come back through
 * out-parameters as opaque handles and must be released with the matching
 * _free function. fsl_last_error() describes the most recent failure on the
 * calling thread.
 */
#ifndef FSL_H
#define FSL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FSL_API __declspec(dllexport)
#else
#define FSL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fsl_status {
    FSL_OK = 0,
    FSL_ERR_INVALID_ARGUMENT = 1,
    FSL_ERR_DIMENSION = 2,
    FSL_ERR_CONFIG = 3,
    FSL_ERR_PARSE = 4,
    FSL_ERR_SCHEMA = 5,
    FSL_ERR_IO = 6,
    FSL_ERR_VERSION = 7,
    FSL_ERR_INTEGRITY = 8,
    FSL_ERR_SAMPLING = 9,
    FSL_ERR_CONTRACT = 10,
    FSL_ERR_NUMERIC = 11,
    FSL_ERR_UNSUPPORTED = 12,
    FSL_ERR_INTERNAL = 13
} fsl_status;

FSL_API const char* fsl_strerror(fsl_status status);
FSL_API const char* fsl_last_error(void);
FSL_API uint32_t fsl_abi_version(void);

typedef struct fsl_config fsl_config;
typedef struct fsl_dataset fsl_dataset;
typedef struct fsl_model fsl_model;

/* ---- configuration ---- */

FSL_API fsl_status fsl_config_create(fsl_config** out);
FSL_API fsl_status fsl_config_load(const char* path, fsl_config** out);
/* Dotted path keys, e.g. fsl_config_set(cfg, "train.lr", "0.001"). */
FSL_API fsl_status fsl_config_set(fsl_config* cfg, const char* key, const char* value);
FSL_API fsl_status fsl_config_get(const fsl_config* cfg, const char* key, char* buf, size_t bufsz);
/* Schema description; caller buffer, truncated if too small. */
FSL_API fsl_status fsl_config_describe(char* buf, size_t bufsz);
FSL_API void fsl_config_free(fsl_config* cfg);

/* ---- datasets ---- */

FSL_API fsl_status fsl_dataset_generate(const fsl_config* cfg, fsl_dataset** out);
FSL_API fsl_status fsl_dataset_load(const char* path, fsl_dataset** out);
FSL_API fsl_status fsl_dataset_save(const fsl_dataset* data, const char* path);
FSL_API fsl_status fsl_dataset_shape(const fsl_dataset* data, size_t* rows, size_t* dim,
                                     size_t* classes);
FSL_API void fsl_dataset_free(fsl_dataset* data);

/* ---- models ---- */

FSL_API fsl_status fsl_model_load(const char* path, fsl_model** out);
FSL_API fsl_status fsl_model_save(const fsl_model* model, const char* path);
FSL_API fsl_status fsl_model_param_count(const fsl_model* model, uint64_t* adaptor_params);
FSL_API void fsl_model_free(fsl_model* model);

/* Backbone classification pretraining on the seen split. */
FSL_API fsl_status fsl_pretrain(const fsl_config* cfg, const fsl_dataset* data, fsl_model** out);

/* Line-delimited progress records, one call per epoch. */
typedef void (*fsl_log_fn)(const char* line, void* user);

/* Episodic training. init may be NULL (fresh model) or a pretrained/previous
 * checkpoint whose backbone and head are taken as the starting point. */
FSL_API fsl_status fsl_train(const fsl_config* cfg, const fsl_dataset* data, const fsl_model* init,
                             fsl_log_fn log, void* user, fsl_model** out);

/* ---- evaluation ---- */

typedef struct fsl_report {
    int32_t n_way;
    int32_t m_shot;
    int64_t n_tasks;
    double mean_accuracy; /* percent */
    double ci95;          /* percent */
} fsl_report;

typedef struct fsl_generalized_report {
    int64_t n_tasks;
    int32_t seen_classes;
    int32_t n_way;
    double calibration;
    double seen_accuracy;
    double unseen_accuracy;
    double combined_accuracy;
    double combined_ci95;
} fsl_generalized_report;

FSL_API fsl_status fsl_evaluate(const fsl_config* cfg, const fsl_model* model,
                                const fsl_dataset* data, fsl_report* out);
/* One report per entry of eval.ways. n_reports in: capacity, out: written. */
FSL_API fsl_status fsl_evaluate_ways(const fsl_config* cfg, const fsl_model* model,
                                     const fsl_dataset* data, fsl_report* reports,
                                     size_t* n_reports);
FSL_API fsl_status fsl_evaluate_transductive(const fsl_config* cfg, const fsl_model* model,
                                             const fsl_dataset* data, fsl_report* out);
FSL_API fsl_status fsl_evaluate_generalized(const fsl_config* cfg, const fsl_model* model,
                                            const fsl_dataset* data,
                                            fsl_generalized_report* out);

/* ---- diagnostics ---- */

FSL_API fsl_status fsl_grad_check(const char* adaptor, size_t dim, uint64_t seed, int n_seeds,
                                  double* max_rel_err);

typedef struct fsl_invariance_report {
    int32_t equivariant_expected;
    int32_t passed;
    int32_t violation_found;
    double max_deviation;
    double violation_magnitude;
} fsl_invariance_report;

FSL_API fsl_status fsl_invariance_check(const char* adaptor, size_t dim, uint64_t seed,
                                        double tolerance, fsl_invariance_report* out);

FSL_API fsl_status fsl_param_count(const char* adaptor, const fsl_config* cfg, size_t dim,
                                   uint64_t* count);

/* kind: "tasks" or "ways"; writes a CSV to out_path. */
FSL_API fsl_status fsl_plot_dump(const fsl_config* cfg, const fsl_model* model,
                                 const fsl_dataset* data, const char* kind, const char* out_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* FSL_H */
