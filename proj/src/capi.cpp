#include "fsl/fsl.h"

#include <cstdio>
#include <cstring>
#include <new>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/experiments.hpp"

namespace {

thread_local std::string g_last_error;

fsl_status status_from(fsl::ErrorCode code) {
    return static_cast<fsl_status>(static_cast<int>(code));
}

// Every entry point funnels through here so exceptions never cross the ABI.
template <typename Fn>
fsl_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return FSL_OK;
    } catch (const fsl::Error& e) {
        g_last_error = e.what();
        return status_from(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return FSL_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return FSL_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return FSL_ERR_INTERNAL;
    }
}

fsl_status fail_null(const char* what) {
    g_last_error = std::string(what) + " must not be null";
    return FSL_ERR_INVALID_ARGUMENT;
}

void copy_out(const std::string& text, char* buf, size_t bufsz) {
    size_t n = text.size() < bufsz - 1 ? text.size() : bufsz - 1;
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
}

fsl_report to_c(const fsl::EvalReport& r) {
    fsl_report out;
    out.n_way = r.n_way;
    out.m_shot = r.m_shot;
    out.n_tasks = r.n_tasks;
    out.mean_accuracy = r.mean_accuracy;
    out.ci95 = r.ci95;
    return out;
}

} // namespace

struct fsl_config {
    fsl::ExperimentConfig cfg;
};

struct fsl_dataset {
    fsl::VectorDataset data;
};

struct fsl_model {
    fsl::Checkpoint ckpt;
};

extern "C" {

const char* fsl_strerror(fsl_status status) {
    switch (status) {
    case FSL_OK: return "ok";
    case FSL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case FSL_ERR_DIMENSION: return "dimension mismatch";
    case FSL_ERR_CONFIG: return "bad configuration";
    case FSL_ERR_PARSE: return "parse error";
    case FSL_ERR_SCHEMA: return "schema violation";
    case FSL_ERR_IO: return "io failure";
    case FSL_ERR_VERSION: return "unsupported version";
    case FSL_ERR_INTEGRITY: return "integrity check failed";
    case FSL_ERR_SAMPLING: return "sampling impossible";
    case FSL_ERR_CONTRACT: return "contract violation";
    case FSL_ERR_NUMERIC: return "numeric failure";
    case FSL_ERR_UNSUPPORTED: return "unsupported operation";
    case FSL_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* fsl_last_error(void) { return g_last_error.c_str(); }

uint32_t fsl_abi_version(void) { return 1; }

/* ---- configuration ---- */

fsl_status fsl_config_create(fsl_config** out) {
    if (!out) return fail_null("out");
    return guarded([&] { *out = new fsl_config{}; });
}

fsl_status fsl_config_load(const char* path, fsl_config** out) {
    if (!path) return fail_null("path");
    if (!out) return fail_null("out");
    return guarded([&] { *out = new fsl_config{fsl::load_config(path)}; });
}

fsl_status fsl_config_set(fsl_config* cfg, const char* key, const char* value) {
    if (!cfg) return fail_null("cfg");
    if (!key) return fail_null("key");
    if (!value) return fail_null("value");
    return guarded([&] { fsl::config_set(cfg->cfg, key, value); });
}

fsl_status fsl_config_get(const fsl_config* cfg, const char* key, char* buf, size_t bufsz) {
    if (!cfg) return fail_null("cfg");
    if (!key) return fail_null("key");
    if (!buf || bufsz == 0) return fail_null("buf");
    return guarded([&] { copy_out(fsl::config_get(cfg->cfg, key), buf, bufsz); });
}

fsl_status fsl_config_describe(char* buf, size_t bufsz) {
    if (!buf || bufsz == 0) return fail_null("buf");
    return guarded([&] { copy_out(fsl::config_schema(), buf, bufsz); });
}

void fsl_config_free(fsl_config* cfg) { delete cfg; }

/* ---- datasets ---- */

fsl_status fsl_dataset_generate(const fsl_config* cfg, fsl_dataset** out) {
    if (!cfg) return fail_null("cfg");
    if (!out) return fail_null("out");
    return guarded([&] { *out = new fsl_dataset{fsl::run_gen_data(cfg->cfg)}; });
}

fsl_status fsl_dataset_load(const char* path, fsl_dataset** out) {
    if (!path) return fail_null("path");
    if (!out) return fail_null("out");
    return guarded([&] { *out = new fsl_dataset{fsl::load_dataset(path)}; });
}

fsl_status fsl_dataset_save(const fsl_dataset* data, const char* path) {
    if (!data) return fail_null("data");
    if (!path) return fail_null("path");
    return guarded([&] { fsl::save_dataset(data->data, path); });
}

fsl_status fsl_dataset_shape(const fsl_dataset* data, size_t* rows, size_t* dim, size_t* classes) {
    if (!data) return fail_null("data");
    return guarded([&] {
        if (rows) *rows = data->data.rows();
        if (dim) *dim = data->data.dim();
        if (classes) *classes = static_cast<size_t>(data->data.num_classes);
    });
}

void fsl_dataset_free(fsl_dataset* data) { delete data; }

/* ---- models ---- */

fsl_status fsl_model_load(const char* path, fsl_model** out) {
    if (!path) return fail_null("path");
    if (!out) return fail_null("out");
    return guarded([&] { *out = new fsl_model{fsl::load_checkpoint(path)}; });
}

fsl_status fsl_model_save(const fsl_model* model, const char* path) {
    if (!model) return fail_null("model");
    if (!path) return fail_null("path");
    return guarded([&] { fsl::save_checkpoint(model->ckpt, path); });
}

fsl_status fsl_model_param_count(const fsl_model* model, uint64_t* adaptor_params) {
    if (!model) return fail_null("model");
    if (!adaptor_params) return fail_null("adaptor_params");
    return guarded([&] { *adaptor_params = fsl::param_count(model->ckpt.model.adaptor); });
}

void fsl_model_free(fsl_model* model) { delete model; }

fsl_status fsl_pretrain(const fsl_config* cfg, const fsl_dataset* data, fsl_model** out) {
    if (!cfg) return fail_null("cfg");
    if (!data) return fail_null("data");
    if (!out) return fail_null("out");
    return guarded([&] {
        fsl::PretrainResult res = fsl::run_pretrain(cfg->cfg, data->data);
        fsl::Checkpoint ckpt;
        ckpt.model = fsl::assemble_pretrained(cfg->cfg, std::move(res.backbone));
        ckpt.seeds = {cfg->cfg.data.seed, cfg->cfg.pretrain.seed, cfg->cfg.train.seed};
        ckpt.config_json = fsl::config_to_json(cfg->cfg);
        *out = new fsl_model{std::move(ckpt)};
    });
}

fsl_status fsl_train(const fsl_config* cfg, const fsl_dataset* data, const fsl_model* init,
                     fsl_log_fn log, void* user, fsl_model** out) {
    if (!cfg) return fail_null("cfg");
    if (!data) return fail_null("data");
    if (!out) return fail_null("out");
    return guarded([&] {
        fsl::EpochCallback on_epoch;
        if (log) {
            on_epoch = [log, user](const fsl::EpochRecord& rec) {
                char line[160];
                std::snprintf(line, sizeof(line), "epoch=%d loss=%.6f val=%.4f lr=%.6g",
                              rec.epoch, rec.mean_loss, rec.val_accuracy, rec.learning_rate);
                log(line, user);
            };
        }
        fsl::TrainResult res = fsl::run_train(cfg->cfg, data->data,
                                              init ? &init->ckpt.model : nullptr, on_epoch);
        fsl::Checkpoint ckpt;
        ckpt.model = std::move(res.model);
        ckpt.seeds = {cfg->cfg.data.seed, cfg->cfg.pretrain.seed, cfg->cfg.train.seed};
        ckpt.config_json = fsl::config_to_json(cfg->cfg);
        *out = new fsl_model{std::move(ckpt)};
    });
}

/* ---- evaluation ---- */

fsl_status fsl_evaluate(const fsl_config* cfg, const fsl_model* model, const fsl_dataset* data,
                        fsl_report* out) {
    if (!cfg) return fail_null("cfg");
    if (!model) return fail_null("model");
    if (!data) return fail_null("data");
    if (!out) return fail_null("out");
    return guarded([&] {
        fsl::Splits splits = fsl::build_splits(cfg->cfg, data->data);
        *out = to_c(fsl::run_eval(cfg->cfg, model->ckpt.model, splits.unseen));
    });
}

fsl_status fsl_evaluate_ways(const fsl_config* cfg, const fsl_model* model,
                             const fsl_dataset* data, fsl_report* reports, size_t* n_reports) {
    if (!cfg) return fail_null("cfg");
    if (!model) return fail_null("model");
    if (!data) return fail_null("data");
    if (!reports) return fail_null("reports");
    if (!n_reports) return fail_null("n_reports");
    return guarded([&] {
        if (*n_reports < cfg->cfg.eval.ways.size())
            fsl::raise(fsl::ErrorCode::invalid_argument,
                       "reports capacity " + std::to_string(*n_reports) + " below " +
                           std::to_string(cfg->cfg.eval.ways.size()) + " way counts");
        fsl::Splits splits = fsl::build_splits(cfg->cfg, data->data);
        std::vector<fsl::EvalReport> rs =
            fsl::run_eval_ways(cfg->cfg, model->ckpt.model, splits.unseen);
        for (size_t i = 0; i < rs.size(); ++i) reports[i] = to_c(rs[i]);
        *n_reports = rs.size();
    });
}

fsl_status fsl_evaluate_transductive(const fsl_config* cfg, const fsl_model* model,
                                     const fsl_dataset* data, fsl_report* out) {
    if (!cfg) return fail_null("cfg");
    if (!model) return fail_null("model");
    if (!data) return fail_null("data");
    if (!out) return fail_null("out");
    return guarded([&] {
        fsl::Splits splits = fsl::build_splits(cfg->cfg, data->data);
        *out = to_c(fsl::run_eval_transductive(cfg->cfg, model->ckpt.model, splits.unseen));
    });
}

fsl_status fsl_evaluate_generalized(const fsl_config* cfg, const fsl_model* model,
                                    const fsl_dataset* data, fsl_generalized_report* out) {
    if (!cfg) return fail_null("cfg");
    if (!model) return fail_null("model");
    if (!data) return fail_null("data");
    if (!out) return fail_null("out");
    return guarded([&] {
        double calibration = 0.0;
        fsl::GeneralizedReport r =
            fsl::run_eval_generalized(cfg->cfg, model->ckpt.model, data->data, &calibration);
        out->n_tasks = r.n_tasks;
        out->seen_classes = r.seen_classes;
        out->n_way = r.n_way;
        out->calibration = r.calibration;
        out->seen_accuracy = r.seen_accuracy;
        out->unseen_accuracy = r.unseen_accuracy;
        out->combined_accuracy = r.combined_accuracy;
        out->combined_ci95 = r.combined_ci95;
    });
}

/* ---- diagnostics ---- */

fsl_status fsl_grad_check(const char* adaptor, size_t dim, uint64_t seed, int n_seeds,
                          double* max_rel_err) {
    if (!adaptor) return fail_null("adaptor");
    if (!max_rel_err) return fail_null("max_rel_err");
    return guarded([&] {
        *max_rel_err =
            fsl::run_grad_check(fsl::adaptor_kind_from_name(adaptor), dim, seed, n_seeds);
    });
}

fsl_status fsl_invariance_check(const char* adaptor, size_t dim, uint64_t seed, double tolerance,
                                fsl_invariance_report* out) {
    if (!adaptor) return fail_null("adaptor");
    if (!out) return fail_null("out");
    return guarded([&] {
        fsl::InvarianceResult r =
            fsl::run_invariance_check(fsl::adaptor_kind_from_name(adaptor), dim, seed, tolerance);
        out->equivariant_expected = r.equivariant_expected;
        out->passed = r.passed;
        out->violation_found = r.violation_found;
        out->max_deviation = r.max_deviation;
        out->violation_magnitude = r.violation_magnitude;
    });
}

fsl_status fsl_param_count(const char* adaptor, const fsl_config* cfg, size_t dim,
                           uint64_t* count) {
    if (!adaptor) return fail_null("adaptor");
    if (!cfg) return fail_null("cfg");
    if (!count) return fail_null("count");
    return guarded([&] {
        fsl::AdaptorKind kind = fsl::adaptor_kind_from_name(adaptor);
        if (kind == fsl::AdaptorKind::identity) {
            *count = 0;
            return;
        }
        for (const fsl::ParamCountRow& row : fsl::run_param_count(cfg->cfg, dim))
            if (row.kind == kind) *count = row.count;
    });
}

fsl_status fsl_plot_dump(const fsl_config* cfg, const fsl_model* model, const fsl_dataset* data,
                         const char* kind, const char* out_path) {
    if (!cfg) return fail_null("cfg");
    if (!model) return fail_null("model");
    if (!data) return fail_null("data");
    if (!kind) return fail_null("kind");
    if (!out_path) return fail_null("out_path");
    return guarded([&] {
        fsl::Splits splits = fsl::build_splits(cfg->cfg, data->data);
        fsl::run_plot_dump(cfg->cfg, model->ckpt.model, splits.unseen, kind, out_path);
    });
}

} /* extern "C" */
