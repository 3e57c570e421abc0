#include "fsl/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "fsl/errors.hpp"
#include "fsl/gradcheck.hpp"
#include "fsl/training.hpp"

namespace fsl {

namespace {

// Model construction streams, derived from block seeds so that reruns with
// the same config bitwise repeat.
constexpr uint64_t kBackboneInitStream = 0xbb01;
constexpr uint64_t kModelInitStream = 0x30de1;
constexpr uint64_t kCalibrationStream = 0xca1b;

std::vector<size_t> backbone_dims(const ExperimentConfig& cfg) {
    std::vector<size_t> dims;
    dims.push_back(static_cast<size_t>(cfg.data.dim));
    for (int h : cfg.backbone.hidden) {
        if (h < 1) raise(ErrorCode::config, "backbone.hidden entries must be positive");
        dims.push_back(static_cast<size_t>(h));
    }
    dims.push_back(static_cast<size_t>(cfg.backbone.embed_dim));
    return dims;
}

size_t embed_dim_of(const ExperimentConfig& cfg) {
    return static_cast<size_t>(cfg.backbone.embed_dim > 0 ? cfg.backbone.embed_dim
                                                          : cfg.data.dim);
}

AdaptorParams build_adaptor(const AdaptorConfig& a, size_t d, Rng& rng) {
    switch (a.kind) {
    case AdaptorKind::identity:
        return make_identity_adaptor(d);
    case AdaptorKind::bilstm:
        return make_bilstm_adaptor(d, static_cast<size_t>(a.bilstm_hidden), rng);
    case AdaptorKind::deepsets:
        return make_deepsets_adaptor(d, static_cast<size_t>(a.deepsets_hidden), a.deepsets_agg,
                                     rng);
    case AdaptorKind::gcn:
        return make_gcn_adaptor(d, static_cast<size_t>(a.gcn_steps),
                                static_cast<size_t>(a.gcn_hidden), a.gcn_shared, rng);
    case AdaptorKind::transformer:
        return make_transformer_adaptor(d, static_cast<size_t>(a.heads),
                                        static_cast<size_t>(a.layers),
                                        static_cast<size_t>(a.d_head), a.dropout, rng);
    }
    raise(ErrorCode::internal, "unhandled adaptor kind");
}

} // namespace

VectorDataset run_gen_data(const ExperimentConfig& cfg) {
    Rng rng(cfg.data.seed);
    return gen_synthetic(cfg.data.classes, cfg.data.per_class, cfg.data.dim, cfg.data.spread,
                         cfg.data.separation, rng);
}

Model build_model(const ExperimentConfig& cfg, Rng& rng) {
    Model m;
    if (cfg.backbone.embed_dim > 0) {
        m.backbone = make_backbone(backbone_dims(cfg), rng);
    } else {
        m.backbone = make_identity_backbone(static_cast<size_t>(cfg.data.dim));
    }
    m.adaptor = build_adaptor(cfg.adaptor, embed_dim_of(cfg), rng);
    m.head.kind = cfg.head.similarity;
    m.head.temperature = cfg.head.temperature > 0.0 ? cfg.head.temperature
                                                    : default_temperature(cfg.head.similarity);
    m.pre_average = cfg.train.pre_average;
    return m;
}

Splits build_splits(const ExperimentConfig& cfg, const VectorDataset& data) {
    Rng rng(cfg.split.seed);
    return make_splits(data, cfg.split.seen_frac, cfg.split.val_frac, rng);
}

ClasswiseSplit carve_seen_holdout(const ExperimentConfig& cfg, const VectorDataset& seen) {
    return split_per_class(seen, cfg.generalized.holdout_per_class);
}

PretrainResult run_pretrain(const ExperimentConfig& raw_cfg, const VectorDataset& data) {
    // The dataset at hand wins over the generation block's dim.
    ExperimentConfig cfg = raw_cfg;
    cfg.data.dim = static_cast<int>(data.dim());
    Splits splits = build_splits(cfg, data);
    VectorDataset train_pool = cfg.generalized.holdout_per_class > 0
                                   ? carve_seen_holdout(cfg, splits.seen).rest
                                   : splits.seen;
    if (cfg.backbone.embed_dim <= 0)
        raise(ErrorCode::config, "pretrain needs a trainable backbone (embed_dim > 0)");
    Rng init_rng(Rng::derive(cfg.pretrain.seed, kBackboneInitStream));
    BackboneParams init = make_backbone(backbone_dims(cfg), init_rng);
    PretrainOptions opts;
    opts.epochs = cfg.pretrain.epochs;
    opts.batch_size = cfg.pretrain.batch_size;
    opts.learning_rate = cfg.pretrain.learning_rate;
    opts.val_tasks = cfg.pretrain.val_tasks;
    opts.val_queries = cfg.eval.q_queries;
    opts.seed = cfg.pretrain.seed;
    return pretrain_backbone(init, train_pool, splits.val, opts);
}

Model assemble_pretrained(const ExperimentConfig& cfg, BackboneParams backbone) {
    Rng rng(Rng::derive(cfg.train.seed, kModelInitStream));
    Model m = build_model(cfg, rng);
    if (!backbone.dims.empty() && backbone.output_dim() != embed_dim_of(cfg))
        raise(ErrorCode::dimension, "pretrained backbone emits dim " +
                                        std::to_string(backbone.output_dim()) +
                                        ", config expects " + std::to_string(embed_dim_of(cfg)));
    m.backbone = std::move(backbone);
    return m;
}

TrainResult run_train(const ExperimentConfig& raw_cfg, const VectorDataset& data,
                      const Model* init_model, const EpochCallback& on_epoch) {
    ExperimentConfig cfg = raw_cfg;
    cfg.data.dim = static_cast<int>(data.dim());
    Splits splits = build_splits(cfg, data);
    VectorDataset train_pool = cfg.generalized.holdout_per_class > 0
                                   ? carve_seen_holdout(cfg, splits.seen).rest
                                   : splits.seen;
    Model init;
    if (init_model) {
        init = *init_model;
        init.pre_average = cfg.train.pre_average;
    } else {
        Rng rng(Rng::derive(cfg.train.seed, kModelInitStream));
        init = build_model(cfg, rng);
    }
    TrainSettings s;
    s.n_way = cfg.train.n_way;
    s.m_shot = cfg.train.m_shot;
    s.q_queries = cfg.train.q_queries;
    s.lambda = cfg.train.lambda;
    s.epochs = cfg.train.epochs;
    s.episodes_per_epoch = cfg.train.episodes_per_epoch;
    s.optimizer.kind = cfg.train.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    s.optimizer.learning_rate = cfg.train.learning_rate;
    s.optimizer.momentum = cfg.train.momentum;
    s.optimizer.weight_decay = cfg.train.weight_decay;
    s.optimizer.nesterov = cfg.train.nesterov;
    s.backbone_lr_scale = cfg.train.backbone_lr_scale;
    s.lr_decay_every = cfg.train.lr_decay_every;
    s.lr_decay_factor = cfg.train.lr_decay_factor;
    s.val_tasks = cfg.train.val_tasks;
    s.val_queries = cfg.eval.q_queries;
    s.seed = cfg.train.seed;
    return train(s, train_pool, splits.val, std::move(init), on_epoch);
}

namespace {

EvalOptions eval_options(const ExperimentConfig& cfg) {
    EvalOptions o;
    o.n_tasks = cfg.eval.tasks;
    o.seed = cfg.eval.seed;
    o.threads = cfg.eval.threads;
    o.adapt = cfg.eval.adapt;
    return o;
}

} // namespace

EvalReport run_eval(const ExperimentConfig& cfg, const Model& model, const VectorDataset& data) {
    return evaluate(model, data, cfg.eval.n_way, cfg.eval.m_shot, cfg.eval.q_queries,
                    eval_options(cfg));
}

std::vector<EvalReport> run_eval_ways(const ExperimentConfig& cfg, const Model& model,
                                      const VectorDataset& data) {
    return eval_way_generalization(model, data, cfg.eval.ways, cfg.eval.m_shot, cfg.eval.q_queries,
                                   eval_options(cfg));
}

EvalReport run_eval_transductive(const ExperimentConfig& cfg, const Model& model,
                                 const VectorDataset& data) {
    TransductiveVariant v = cfg.eval.transductive == "adapt-only" ? TransductiveVariant::adapt_only
                                                                  : TransductiveVariant::refine;
    return eval_transductive(model, data, cfg.eval.n_way, cfg.eval.m_shot, cfg.eval.q_queries, v,
                             eval_options(cfg));
}

GeneralizedReport run_eval_generalized(const ExperimentConfig& cfg, const Model& model,
                                       const VectorDataset& data, double* chosen_calibration) {
    Splits splits = build_splits(cfg, data);
    ClasswiseSplit holdout = carve_seen_holdout(cfg, splits.seen);
    GeneralizedOptions opts;
    opts.n_way = cfg.eval.n_way;
    opts.m_shot = cfg.eval.m_shot;
    opts.q_queries = cfg.eval.q_queries;
    opts.seen_queries = cfg.generalized.seen_queries;
    opts.proto_per_class = cfg.generalized.proto_per_class;
    opts.n_tasks = cfg.generalized.tasks;
    opts.seed = cfg.generalized.seed;
    double calibration = cfg.generalized.calibration;
    if (cfg.generalized.search_calibration) {
        GeneralizedOptions search_opts = opts;
        search_opts.seed = Rng::derive(cfg.generalized.seed, kCalibrationStream);
        calibration = calibration_search(model, holdout.taken, splits.val, search_opts,
                                         cfg.generalized.grid);
    }
    if (chosen_calibration) *chosen_calibration = calibration;
    return eval_generalized(model, holdout.taken, splits.unseen, opts, calibration);
}

namespace {

// Rebuilds a binding around leaves the checker owns; order matches
// model_params.
ModelBinding binding_from_leaves(Model& model, const std::vector<Var>& leaves) {
    ModelBinding b;
    size_t i = 0;
    for (size_t l = 0; l < model.backbone.weights.size(); ++l) {
        b.backbone.weights.push_back(leaves.at(i++));
        b.backbone.biases.push_back(leaves.at(i++));
    }
    b.adaptor.params = &model.adaptor;
    for (; i < leaves.size(); ++i) b.adaptor.vars.push_back(leaves[i]);
    b.leaves = leaves;
    return b;
}

Episode random_episode(int n_way, int m_shot, int q_queries, size_t dim, Rng& rng) {
    Episode ep;
    ep.n_way = n_way;
    ep.m_shot = m_shot;
    ep.q_queries = q_queries;
    ep.support_x = Matrix::gaussian(static_cast<size_t>(n_way * m_shot), dim, rng);
    ep.query_x = Matrix::gaussian(static_cast<size_t>(n_way * q_queries), dim, rng);
    for (int c = 0; c < n_way; ++c) {
        for (int i = 0; i < m_shot; ++i) ep.support_y.push_back(c);
        for (int i = 0; i < q_queries; ++i) ep.query_y.push_back(c);
        ep.class_ids.push_back(c);
    }
    return ep;
}

AdaptorParams default_adaptor(AdaptorKind kind, size_t d, Rng& rng) {
    switch (kind) {
    case AdaptorKind::identity:
        return make_identity_adaptor(d);
    case AdaptorKind::bilstm:
        return make_bilstm_adaptor(d, 0, rng);
    case AdaptorKind::deepsets:
        return make_deepsets_adaptor(d, 0, SetAggregator::max, rng);
    case AdaptorKind::gcn:
        return make_gcn_adaptor(d, 2, 0, false, rng);
    case AdaptorKind::transformer:
        return make_transformer_adaptor(d, 1, 1, 0, 0.5, rng);
    }
    raise(ErrorCode::internal, "unhandled adaptor kind");
}

} // namespace

double run_grad_check(AdaptorKind kind, size_t d, uint64_t seed, int n_seeds) {
    if (n_seeds < 1) raise(ErrorCode::invalid_argument, "grad check needs at least one seed");
    double worst = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(s)));
        Model model;
        model.backbone = make_backbone({d, d}, rng);
        model.adaptor = default_adaptor(kind, d, rng);
        model.head = SimilarityHead{};
        Episode ep = random_episode(3, 2, 2, d, rng);

        std::vector<Matrix> params;
        for_each_param(model, [&](Matrix& m, bool) { params.push_back(m); });
        TapeProgram program = [&](Tape& tape, const std::vector<Var>& leaves) {
            ModelBinding binding = binding_from_leaves(model, leaves);
            Rng dropout_rng(0);  // never drawn, dropout is off outside training
            return episode_loss(tape, model, binding, ep, 0.1, dropout_rng, false);
        };
        worst = std::max(worst, finite_diff_check(program, params));
    }
    return worst;
}

namespace {

Matrix permute_rows(const Matrix& x, const std::vector<size_t>& perm) {
    Matrix out(x.rows(), x.cols());
    for (size_t i = 0; i < perm.size(); ++i)
        for (size_t j = 0; j < x.cols(); ++j) out(i, j) = x(perm[i], j);
    return out;
}

double equivariance_gap(const AdaptorParams& adaptor, const Matrix& x,
                        const std::vector<int>& labels, const std::vector<size_t>& perm) {
    std::vector<int> permuted_labels(labels.size());
    for (size_t i = 0; i < perm.size(); ++i) permuted_labels[i] = labels[perm[i]];
    Matrix direct = adapt_values(adaptor, permute_rows(x, perm), permuted_labels);
    Matrix routed = permute_rows(adapt_values(adaptor, x, labels), perm);
    double gap = 0.0;
    for (size_t i = 0; i < direct.size(); ++i)
        gap = std::max(gap, std::abs(direct.data()[i] - routed.data()[i]));
    return gap;
}

} // namespace

InvarianceResult run_invariance_check(AdaptorKind kind, size_t d, uint64_t seed,
                                      double tolerance) {
    InvarianceResult res;
    res.kind = kind;
    res.equivariant_expected = kind != AdaptorKind::bilstm;
    Rng rng(seed);
    AdaptorParams adaptor = default_adaptor(kind, d, rng);

    // Exhaustive at n = 5: every one of the 120 orderings.
    {
        Matrix x = Matrix::gaussian(5, d, rng);
        std::vector<int> labels = {0, 1, 2, 0, 1};
        std::vector<size_t> perm = {0, 1, 2, 3, 4};
        do {
            double gap = equivariance_gap(adaptor, x, labels, perm);
            res.max_deviation = std::max(res.max_deviation, gap);
            if (gap > tolerance) {
                res.violation_found = true;
                res.violation_magnitude = std::max(res.violation_magnitude, gap);
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    // Random orderings at n = 32.
    {
        Matrix x = Matrix::gaussian(32, d, rng);
        std::vector<int> labels(32);
        for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
        for (int t = 0; t < 20; ++t) {
            std::vector<size_t> perm = rng.permutation(32);
            double gap = equivariance_gap(adaptor, x, labels, perm);
            res.max_deviation = std::max(res.max_deviation, gap);
            if (gap > tolerance) {
                res.violation_found = true;
                res.violation_magnitude = std::max(res.violation_magnitude, gap);
            }
        }
    }
    res.passed = res.equivariant_expected ? !res.violation_found : res.violation_found;
    return res;
}

std::vector<ParamCountRow> run_param_count(const ExperimentConfig& cfg, size_t d) {
    Rng rng(1);
    std::vector<ParamCountRow> rows;
    for (AdaptorKind kind : {AdaptorKind::bilstm, AdaptorKind::deepsets, AdaptorKind::gcn,
                             AdaptorKind::transformer}) {
        AdaptorConfig a = cfg.adaptor;
        a.kind = kind;
        rows.push_back({kind, param_count(build_adaptor(a, d, rng))});
    }
    return rows;
}

void run_plot_dump(const ExperimentConfig& cfg, const Model& model, const VectorDataset& data,
                   const std::string& kind, const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) raise(ErrorCode::io, "cannot open for writing: " + out_path);
    if (kind == "tasks") {
        std::vector<double> accs = per_task_accuracies(model, data, cfg.eval.n_way,
                                                       cfg.eval.m_shot, cfg.eval.q_queries,
                                                       eval_options(cfg));
        out << "task,accuracy\n";
        for (size_t i = 0; i < accs.size(); ++i) out << i << ',' << accs[i] << '\n';
    } else if (kind == "ways") {
        out << "way,mean_accuracy,ci95\n";
        for (const EvalReport& r : run_eval_ways(cfg, model, data))
            out << r.n_way << ',' << r.mean_accuracy << ',' << r.ci95 << '\n';
    } else {
        raise(ErrorCode::invalid_argument, "plot kind must be tasks or ways, got '" + kind + "'");
    }
    if (!out) raise(ErrorCode::io, "write failed: " + out_path);
}

} // namespace fsl
