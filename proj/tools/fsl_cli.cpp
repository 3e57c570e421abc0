// Command line front end. Talks to the library exclusively through the C
// API so the shared library surface stays exercised end to end.
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fsl/fsl.h"

namespace {

struct ConfigDeleter {
    void operator()(fsl_config* p) const { fsl_config_free(p); }
};
struct DatasetDeleter {
    void operator()(fsl_dataset* p) const { fsl_dataset_free(p); }
};
struct ModelDeleter {
    void operator()(fsl_model* p) const { fsl_model_free(p); }
};
using ConfigPtr = std::unique_ptr<fsl_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<fsl_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<fsl_model, ModelDeleter>;

void check(fsl_status status) {
    if (status == FSL_OK) return;
    std::fprintf(stderr, "error: %s (%s)\n", fsl_last_error(), fsl_strerror(status));
    std::exit(1);
}

ConfigPtr make_config(const std::string& config_path, const std::vector<std::string>& sets) {
    fsl_config* raw = nullptr;
    if (config_path.empty()) {
        check(fsl_config_create(&raw));
    } else {
        check(fsl_config_load(config_path.c_str(), &raw));
    }
    ConfigPtr cfg(raw);
    for (const std::string& kv : sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            std::exit(1);
        }
        check(fsl_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    return cfg;
}

DatasetPtr load_data(const std::string& path) {
    fsl_dataset* raw = nullptr;
    check(fsl_dataset_load(path.c_str(), &raw));
    return DatasetPtr(raw);
}

ModelPtr load_model(const std::string& path) {
    fsl_model* raw = nullptr;
    check(fsl_model_load(path.c_str(), &raw));
    return ModelPtr(raw);
}

void print_report(const char* name, const fsl_report& r) {
    std::printf("%s  %d-way %d-shot  tasks %lld  accuracy %.2f%% +/- %.2f\n", name, r.n_way,
                r.m_shot, static_cast<long long>(r.n_tasks), r.mean_accuracy, r.ci95);
}

void add_config_opts(CLI::App* cmd, std::string& config_path, std::vector<std::string>& sets) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", sets, "override, e.g. --set train.lambda=0.2")->take_all();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot embedding adaptation toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string data_path, model_path, init_path, out_path, adaptor = "transformer", kind;
    size_t dim = 8;
    uint64_t seed = 1;
    int n_seeds = 3;
    double tolerance = 1e-4;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_config_opts(gen, config_path, sets);
    gen->add_option("--out", out_path, "dataset file to write")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "pretrain the backbone on the seen split");
    add_config_opts(pre, config_path, sets);
    pre->add_option("--data", data_path, "dataset file")->required();
    pre->add_option("--out", out_path, "model checkpoint to write")->required();

    CLI::App* tr = app.add_subcommand("train", "episodic training on the seen split");
    add_config_opts(tr, config_path, sets);
    tr->add_option("--data", data_path, "dataset file")->required();
    tr->add_option("--init", init_path, "starting checkpoint (e.g. pretrained)");
    tr->add_option("--out", out_path, "model checkpoint to write")->required();

    CLI::App* ev = app.add_subcommand("eval", "accuracy on unseen-class tasks");
    add_config_opts(ev, config_path, sets);
    ev->add_option("--data", data_path, "dataset file")->required();
    ev->add_option("--model", model_path, "model checkpoint")->required();

    CLI::App* evw = app.add_subcommand("eval-ways", "accuracy across way counts");
    add_config_opts(evw, config_path, sets);
    evw->add_option("--data", data_path, "dataset file")->required();
    evw->add_option("--model", model_path, "model checkpoint")->required();

    CLI::App* evt = app.add_subcommand("eval-transductive", "use the query pool at test time");
    add_config_opts(evt, config_path, sets);
    evt->add_option("--data", data_path, "dataset file")->required();
    evt->add_option("--model", model_path, "model checkpoint")->required();

    CLI::App* evg = app.add_subcommand("eval-generalized", "joint seen + unseen label space");
    add_config_opts(evg, config_path, sets);
    evg->add_option("--data", data_path, "dataset file")->required();
    evg->add_option("--model", model_path, "model checkpoint")->required();

    CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
    gc->add_option("--adaptor", adaptor, "identity|bilstm|deepsets|gcn|transformer");
    gc->add_option("--dim", dim, "embedding dimension");
    gc->add_option("--seed", seed, "base seed");
    gc->add_option("--seeds", n_seeds, "number of trials");
    gc->add_option("--tolerance", tolerance, "max relative error to accept");

    double inv_tolerance = 1e-9;
    CLI::App* ic = app.add_subcommand("invariance-check", "permutation equivariance check");
    ic->add_option("--adaptor", adaptor, "identity|bilstm|deepsets|gcn|transformer");
    ic->add_option("--dim", dim, "embedding dimension");
    ic->add_option("--seed", seed, "base seed");
    ic->add_option("--tolerance", inv_tolerance, "max deviation to accept");

    CLI::App* pc = app.add_subcommand("param-count", "adaptor parameter counts");
    add_config_opts(pc, config_path, sets);
    pc->add_option("--dim", dim, "embedding dimension");

    CLI::App* pd = app.add_subcommand("plot-dump", "write evaluation CSVs");
    add_config_opts(pd, config_path, sets);
    pd->add_option("--data", data_path, "dataset file")->required();
    pd->add_option("--model", model_path, "model checkpoint")->required();
    pd->add_option("--kind", kind, "tasks|ways")->required();
    pd->add_option("--out", out_path, "CSV file to write")->required();

    CLI::App* sc = app.add_subcommand("schema", "list every config key");

    if (argc < 2) {
        std::fputs(app.help().c_str(), stderr);
        return 2;
    }
    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        fsl_dataset* raw = nullptr;
        check(fsl_dataset_generate(cfg.get(), &raw));
        DatasetPtr data(raw);
        check(fsl_dataset_save(data.get(), out_path.c_str()));
        size_t rows = 0, d = 0, classes = 0;
        check(fsl_dataset_shape(data.get(), &rows, &d, &classes));
        std::printf("wrote %s: %zu rows, %zu dims, %zu classes\n", out_path.c_str(), rows, d,
                    classes);
    } else if (pre->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        fsl_model* raw = nullptr;
        check(fsl_pretrain(cfg.get(), data.get(), &raw));
        ModelPtr model(raw);
        check(fsl_model_save(model.get(), out_path.c_str()));
        std::printf("wrote %s\n", out_path.c_str());
    } else if (tr->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr init;
        if (!init_path.empty()) init = load_model(init_path);
        fsl_model* raw = nullptr;
        auto log = [](const char* line, void*) { std::printf("%s\n", line); };
        check(fsl_train(cfg.get(), data.get(), init.get(), log, nullptr, &raw));
        ModelPtr model(raw);
        check(fsl_model_save(model.get(), out_path.c_str()));
        std::printf("wrote %s\n", out_path.c_str());
    } else if (ev->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr model = load_model(model_path);
        fsl_report r;
        check(fsl_evaluate(cfg.get(), model.get(), data.get(), &r));
        print_report("eval", r);
    } else if (evw->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr model = load_model(model_path);
        std::vector<fsl_report> reports(64);
        size_t n = reports.size();
        check(fsl_evaluate_ways(cfg.get(), model.get(), data.get(), reports.data(), &n));
        for (size_t i = 0; i < n; ++i) print_report("eval-ways", reports[i]);
    } else if (evt->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr model = load_model(model_path);
        fsl_report r;
        check(fsl_evaluate_transductive(cfg.get(), model.get(), data.get(), &r));
        print_report("eval-transductive", r);
    } else if (evg->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr model = load_model(model_path);
        fsl_generalized_report r;
        check(fsl_evaluate_generalized(cfg.get(), model.get(), data.get(), &r));
        std::printf("eval-generalized  %d seen classes + %d-way  tasks %lld  calibration %.3f\n",
                    r.seen_classes, r.n_way, static_cast<long long>(r.n_tasks), r.calibration);
        std::printf("  seen %.2f%%  unseen %.2f%%  combined %.2f%% +/- %.2f\n", r.seen_accuracy,
                    r.unseen_accuracy, r.combined_accuracy, r.combined_ci95);
    } else if (gc->parsed()) {
        double err = 0.0;
        check(fsl_grad_check(adaptor.c_str(), dim, seed, n_seeds, &err));
        std::printf("grad-check  %s  dim %zu  seeds %d  max_rel_err %.3e\n", adaptor.c_str(), dim,
                    n_seeds, err);
        if (err > tolerance) {
            std::fprintf(stderr, "error: exceeds tolerance %.3e\n", tolerance);
            return 1;
        }
    } else if (ic->parsed()) {
        fsl_invariance_report r;
        check(fsl_invariance_check(adaptor.c_str(), dim, seed, inv_tolerance, &r));
        std::printf("invariance-check  %s  dim %zu  expected %s  max_deviation %.3e%s\n",
                    adaptor.c_str(), dim, r.equivariant_expected ? "equivariant" : "order-sensitive",
                    r.max_deviation,
                    r.violation_found ? "  (order dependence observed)" : "");
        if (!r.passed) {
            std::fprintf(stderr, "error: %s\n",
                         r.equivariant_expected ? "equivariance violated" : "no order dependence found");
            return 1;
        }
    } else if (pc->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        for (const char* name : {"bilstm", "deepsets", "gcn", "transformer"}) {
            uint64_t count = 0;
            check(fsl_param_count(name, cfg.get(), dim, &count));
            std::printf("param-count  %-12s dim %zu  %llu\n", name, dim,
                        static_cast<unsigned long long>(count));
        }
    } else if (pd->parsed()) {
        ConfigPtr cfg = make_config(config_path, sets);
        DatasetPtr data = load_data(data_path);
        ModelPtr model = load_model(model_path);
        check(fsl_plot_dump(cfg.get(), model.get(), data.get(), kind.c_str(), out_path.c_str()));
        std::printf("wrote %s\n", out_path.c_str());
    } else if (sc->parsed()) {
        std::vector<char> buf(16384);
        check(fsl_config_describe(buf.data(), buf.size()));
        std::fputs(buf.data(), stdout);
    }
    return 0;
}
