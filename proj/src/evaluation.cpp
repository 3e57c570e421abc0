#include "fsl/evaluation.hpp"

#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "fsl/errors.hpp"

namespace fsl {

double ci95_half_width(const std::vector<double>& values) {
    size_t n = values.size();
    if (n == 0) raise(ErrorCode::invalid_argument, "ci95: no values");
    if (n == 1) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

EvalReport make_report(const std::string& protocol, int n_way, int m_shot,
                       const std::vector<double>& task_accuracies_pct) {
    EvalReport r;
    r.protocol = protocol;
    r.n_way = n_way;
    r.m_shot = m_shot;
    r.n_tasks = static_cast<long>(task_accuracies_pct.size());
    double mean = 0.0;
    for (double v : task_accuracies_pct) mean += v;
    r.mean_accuracy = mean / static_cast<double>(task_accuracies_pct.size());
    r.ci95 = ci95_half_width(task_accuracies_pct);
    return r;
}

namespace {

// Runs fn(t) for t in [0, n). Results must be written into per-index slots;
// the split into threads cannot change any task's outcome because each task
// reseeds from its own index.
template <typename Fn>
void parallel_tasks(long n, int threads, const Fn& fn) {
    if (threads <= 1 || n < 2) {
        for (long t = 0; t < n; ++t) fn(t);
        return;
    }
    int workers = std::min<long>(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (long t = w; t < n; t += workers) fn(t);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Adapted prototypes for one episode, on a throwaway tape. Inference mode:
// dropout stays off.
Matrix episode_prototypes(const Model& model, const Episode& ep, bool adapt) {
    Model& m = const_cast<Model&>(model);
    Tape tape;
    ModelBinding binding = bind_model(tape, m);
    Var phi_s = embed(tape, m.backbone, binding.backbone, tape.leaf(ep.support_x));
    Rng dummy(0);
    std::vector<int> proto_labels(static_cast<size_t>(ep.n_way));
    for (int k = 0; k < ep.n_way; ++k) proto_labels[static_cast<size_t>(k)] = k;
    Var protos;
    if (!adapt) {
        protos = compute_prototypes(tape, phi_s, ep.support_y, ep.n_way);
    } else if (m.pre_average) {
        Var centers = compute_prototypes(tape, phi_s, ep.support_y, ep.n_way);
        protos = adapt_set(tape, binding.adaptor, centers, proto_labels, dummy, false);
    } else {
        Var adapted = adapt_set(tape, binding.adaptor, phi_s, ep.support_y, dummy, false);
        protos = compute_prototypes(tape, adapted, ep.support_y, ep.n_way);
    }
    return tape.value(protos);
}

double score_queries(const Model& model, const Episode& ep, const Matrix& prototypes) {
    Matrix phi_q = embed_values(model.backbone, ep.query_x);
    Matrix probs = predict_values(model.head, phi_q, prototypes);
    std::vector<int> pred = argmax_rows(probs);
    long correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ep.query_y[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

} // namespace

std::vector<double> per_task_accuracies(const Model& model, const VectorDataset& data, int n_way,
                                        int m_shot, int q_queries, const EvalOptions& opts) {
    if (opts.n_tasks < 1) raise(ErrorCode::invalid_argument, "evaluate: need at least one task");
    std::vector<double> accs(static_cast<size_t>(opts.n_tasks));
    parallel_tasks(opts.n_tasks, opts.threads, [&](long t) {
        Rng rng(Rng::derive(opts.seed, static_cast<uint64_t>(t)));
        Episode ep = sample_episode(data, n_way, m_shot, q_queries, rng);
        Matrix protos = episode_prototypes(model, ep, opts.adapt);
        accs[static_cast<size_t>(t)] = score_queries(model, ep, protos);
    });
    return accs;
}

EvalReport evaluate(const Model& model, const VectorDataset& data, int n_way, int m_shot,
                    int q_queries, const EvalOptions& opts) {
    return make_report(opts.adapt ? "standard" : "no-adapt", n_way, m_shot,
                       per_task_accuracies(model, data, n_way, m_shot, q_queries, opts));
}

std::vector<EvalReport> eval_way_generalization(const Model& model, const VectorDataset& data,
                                                const std::vector<int>& ways, int m_shot,
                                                int q_queries, const EvalOptions& opts) {
    if (ways.empty()) raise(ErrorCode::invalid_argument, "eval_way_generalization: no way counts");
    std::vector<EvalReport> reports;
    for (int n : ways) {
        EvalReport r = evaluate(model, data, n, m_shot, q_queries, opts);
        r.protocol = "way-" + std::to_string(n);
        reports.push_back(std::move(r));
    }
    return reports;
}

Matrix refine_prototypes(const SimilarityHead& head, const Matrix& prototypes, const Matrix& pool,
                         double support_count) {
    if (support_count <= 0.0)
        raise(ErrorCode::invalid_argument, "refine_prototypes: support mass must be positive");
    if (pool.rows() == 0) return prototypes;
    Matrix z = predict_values(head, pool, prototypes);  // soft assignments, rows sum to 1
    Matrix refined(prototypes.rows(), prototypes.cols());
    for (size_t n = 0; n < prototypes.rows(); ++n) {
        double mass = support_count;
        for (size_t u = 0; u < pool.rows(); ++u) mass += z(u, n);
        for (size_t j = 0; j < prototypes.cols(); ++j) {
            double acc = support_count * prototypes(n, j);
            for (size_t u = 0; u < pool.rows(); ++u) acc += z(u, n) * pool(u, j);
            refined(n, j) = acc / mass;
        }
    }
    return refined;
}

EvalReport eval_transductive(const Model& model, const VectorDataset& data, int n_way, int m_shot,
                             int q_queries, TransductiveVariant variant, const EvalOptions& opts) {
    if (model.adaptor.kind != AdaptorKind::transformer)
        raise(ErrorCode::unsupported, "transductive evaluation needs a transformer adaptor, got " +
                                          std::string(adaptor_kind_name(model.adaptor.kind)));
    if (opts.n_tasks < 1) raise(ErrorCode::invalid_argument, "evaluate: need at least one task");
    std::vector<double> accs(static_cast<size_t>(opts.n_tasks));
    Model& m = const_cast<Model&>(model);
    parallel_tasks(opts.n_tasks, opts.threads, [&](long t) {
        Rng rng(Rng::derive(opts.seed, static_cast<uint64_t>(t)));
        Episode ep = sample_episode(data, n_way, m_shot, q_queries, rng);

        // The unlabeled pool is the query set itself. Labeled instances
        // enter as class means; the whole union is adapted together.
        Tape tape;
        ModelBinding binding = bind_model(tape, m);
        Var phi_s = embed(tape, m.backbone, binding.backbone, tape.leaf(ep.support_x));
        Var phi_q = embed(tape, m.backbone, binding.backbone, tape.leaf(ep.query_x));
        Var centers = compute_prototypes(tape, phi_s, ep.support_y, ep.n_way);
        Var joint = tape.stack_rows({centers, phi_q});
        std::vector<int> joint_labels;  // unused by the transformer
        joint_labels.resize(tape.value(joint).rows(), 0);
        Rng dummy(0);
        Var adapted = adapt_set(tape, binding.adaptor, joint, joint_labels, dummy, false);
        size_t n = static_cast<size_t>(ep.n_way);
        Matrix protos = tape.value(tape.slice_rows(adapted, 0, n));
        if (variant == TransductiveVariant::refine) {
            const Matrix& av = tape.value(adapted);
            Matrix pool(av.rows() - n, av.cols());
            for (size_t i = n; i < av.rows(); ++i)
                for (size_t j = 0; j < av.cols(); ++j) pool(i - n, j) = av(i, j);
            protos = refine_prototypes(m.head, protos, pool, static_cast<double>(ep.m_shot));
        }
        accs[static_cast<size_t>(t)] = score_queries(model, ep, protos);
    });
    EvalReport r = make_report(variant == TransductiveVariant::refine ? "transductive-refine"
                                                                      : "transductive-adapt",
                               n_way, m_shot, accs);
    return r;
}

std::vector<GeneralizedTaskLogits> collect_generalized_logits(const Model& model,
                                                              const VectorDataset& seen_heldout,
                                                              const VectorDataset& unseen,
                                                              const GeneralizedOptions& opts) {
    if (opts.n_tasks < 1) raise(ErrorCode::invalid_argument, "eval_generalized: need tasks");
    int c_seen = seen_heldout.num_classes;
    int proto_per_class = opts.proto_per_class;
    // Split every held-out class into prototype rows and test rows.
    std::vector<int> proto_rows, test_rows;
    std::vector<int> test_labels;
    for (int c = 0; c < c_seen; ++c) {
        const auto& rows = seen_heldout.class_rows[static_cast<size_t>(c)];
        int take = proto_per_class > 0 ? proto_per_class : static_cast<int>(rows.size()) / 2;
        if (take < 1 || take >= static_cast<int>(rows.size()))
            raise(ErrorCode::config, "eval_generalized: class " + std::to_string(c) +
                                         " cannot split " + std::to_string(rows.size()) +
                                         " held-out rows into prototypes and tests");
        for (size_t i = 0; i < rows.size(); ++i) {
            if (i < static_cast<size_t>(take)) {
                proto_rows.push_back(rows[i]);
            } else {
                test_rows.push_back(rows[i]);
                test_labels.push_back(c);
            }
        }
    }
    if (opts.seen_queries < 1 || opts.seen_queries > static_cast<int>(test_rows.size()))
        raise(ErrorCode::config, "eval_generalized: seen_queries must lie in [1, " +
                                     std::to_string(test_rows.size()) + "]");

    auto gather = [&](const std::vector<int>& rows) {
        Matrix out(rows.size(), seen_heldout.dim());
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t j = 0; j < seen_heldout.dim(); ++j)
                out(i, j) = seen_heldout.features(static_cast<size_t>(rows[i]), j);
        return out;
    };
    // Seen prototypes: plain class means of held-out embeddings.
    Matrix seen_protos;
    {
        Matrix emb = embed_values(model.backbone, gather(proto_rows));
        std::vector<int> labels;
        for (int c = 0; c < c_seen; ++c) {
            const auto& rows = seen_heldout.class_rows[static_cast<size_t>(c)];
            int take = proto_per_class > 0 ? proto_per_class : static_cast<int>(rows.size()) / 2;
            for (int i = 0; i < take; ++i) labels.push_back(c);
        }
        seen_protos = compute_prototypes_values(emb, labels, c_seen);
    }

    std::vector<GeneralizedTaskLogits> tasks(static_cast<size_t>(opts.n_tasks));
    for (long t = 0; t < opts.n_tasks; ++t) {
        Rng rng(Rng::derive(opts.seed, static_cast<uint64_t>(t)));
        Episode ep = sample_episode(unseen, opts.n_way, opts.m_shot, opts.q_queries, rng);
        Matrix unseen_protos = episode_prototypes(model, ep, true);

        std::vector<size_t> picks = rng.sample_without_replacement(
            test_rows.size(), static_cast<size_t>(opts.seen_queries));
        size_t n_seen_q = picks.size();
        size_t n_unseen_q = ep.query_x.rows();
        Matrix test_x(n_seen_q + n_unseen_q, seen_heldout.dim());
        GeneralizedTaskLogits& task = tasks[static_cast<size_t>(t)];
        task.truth.resize(n_seen_q + n_unseen_q);
        task.from_seen.resize(n_seen_q + n_unseen_q);
        for (size_t i = 0; i < n_seen_q; ++i) {
            int row = test_rows[picks[i]];
            for (size_t j = 0; j < seen_heldout.dim(); ++j)
                test_x(i, j) = seen_heldout.features(static_cast<size_t>(row), j);
            task.truth[i] = test_labels[picks[i]];
            task.from_seen[i] = true;
        }
        for (size_t i = 0; i < n_unseen_q; ++i) {
            for (size_t j = 0; j < unseen.dim(); ++j)
                test_x(n_seen_q + i, j) = ep.query_x(i, j);
            task.truth[n_seen_q + i] = c_seen + ep.query_y[i];
            task.from_seen[n_seen_q + i] = false;
        }

        size_t total_classes = static_cast<size_t>(c_seen + opts.n_way);
        if (opts.random_predictor) {
            task.logits = Matrix(test_x.rows(), total_classes);
            for (size_t i = 0; i < task.logits.size(); ++i)
                task.logits.data()[i] = rng.uniform();
            continue;
        }
        // Joint similarity logits over seen then unseen prototypes.
        Matrix protos(total_classes, seen_protos.cols());
        for (size_t i = 0; i < static_cast<size_t>(c_seen); ++i)
            for (size_t j = 0; j < protos.cols(); ++j) protos(i, j) = seen_protos(i, j);
        for (size_t i = 0; i < static_cast<size_t>(opts.n_way); ++i)
            for (size_t j = 0; j < protos.cols(); ++j)
                protos(static_cast<size_t>(c_seen) + i, j) = unseen_protos(i, j);
        Matrix phi = embed_values(model.backbone, test_x);
        Tape tape;
        Var sim;
        switch (model.head.kind) {
        case Similarity::neg_sq_euclidean:
            sim = tape.scale(tape.pairwise_sqdist(tape.leaf(phi), tape.leaf(protos)), -1.0);
            break;
        case Similarity::cosine:
            sim = tape.cosine_sim(tape.leaf(phi), tape.leaf(protos));
            break;
        }
        task.logits = scale(tape.value(sim), model.head.temperature);
    }
    return tasks;
}

GeneralizedReport score_generalized(const std::vector<GeneralizedTaskLogits>& tasks,
                                    int seen_classes, int n_way, double calibration) {
    GeneralizedReport report;
    report.n_tasks = static_cast<long>(tasks.size());
    report.seen_classes = seen_classes;
    report.n_way = n_way;
    report.calibration = calibration;
    std::vector<double> combined_per_task;
    for (const auto& task : tasks) {
        long correct = 0;
        for (size_t i = 0; i < task.logits.rows(); ++i) {
            size_t best = 0;
            double best_score = -1e300;
            for (size_t j = 0; j < task.logits.cols(); ++j) {
                double s = task.logits(i, j);
                if (j < static_cast<size_t>(seen_classes)) s -= calibration;
                if (s > best_score) {
                    best_score = s;
                    best = j;
                }
            }
            bool ok = static_cast<int>(best) == task.truth[i];
            correct += ok;
            if (task.from_seen[i]) {
                report.seen_total += 1;
                report.seen_correct += ok;
            } else {
                report.unseen_total += 1;
                report.unseen_correct += ok;
            }
        }
        combined_per_task.push_back(100.0 * static_cast<double>(correct) /
                                    static_cast<double>(task.logits.rows()));
    }
    report.seen_accuracy =
        100.0 * static_cast<double>(report.seen_correct) / static_cast<double>(report.seen_total);
    report.unseen_accuracy = 100.0 * static_cast<double>(report.unseen_correct) /
                             static_cast<double>(report.unseen_total);
    report.combined_accuracy =
        100.0 * static_cast<double>(report.seen_correct + report.unseen_correct) /
        static_cast<double>(report.seen_total + report.unseen_total);
    report.combined_ci95 = ci95_half_width(combined_per_task);
    return report;
}

GeneralizedReport eval_generalized(const Model& model, const VectorDataset& seen_heldout,
                                   const VectorDataset& unseen, const GeneralizedOptions& opts,
                                   double calibration) {
    std::vector<GeneralizedTaskLogits> tasks =
        collect_generalized_logits(model, seen_heldout, unseen, opts);
    return score_generalized(tasks, seen_heldout.num_classes, opts.n_way, calibration);
}

double calibration_search(const Model& model, const VectorDataset& seen_heldout,
                          const VectorDataset& val, const GeneralizedOptions& opts,
                          const std::vector<double>& grid) {
    if (grid.empty()) raise(ErrorCode::invalid_argument, "calibration_search: empty grid");
    std::vector<GeneralizedTaskLogits> tasks =
        collect_generalized_logits(model, seen_heldout, val, opts);
    double best_factor = grid.front();
    double best_acc = -1.0;
    for (double factor : grid) {
        GeneralizedReport r = score_generalized(tasks, seen_heldout.num_classes, opts.n_way, factor);
        if (r.combined_accuracy > best_acc ||
            (r.combined_accuracy == best_acc && factor < best_factor)) {
            best_acc = r.combined_accuracy;
            best_factor = factor;
        }
    }
    return best_factor;
}

} // namespace fsl
