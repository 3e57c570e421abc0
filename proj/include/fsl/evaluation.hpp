#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsl/episodes.hpp"
#include "fsl/model.hpp"

namespace fsl {

// Accuracy summary over independently sampled tasks. Percentages.
struct EvalReport {
    std::string protocol;
    int n_way = 0;
    int m_shot = 0;
    long n_tasks = 0;
    double mean_accuracy = 0.0;
    double ci95 = 0.0;
};

// 1.96 * sample std (ddof 1) / sqrt(n), in the units of the inputs.
double ci95_half_width(const std::vector<double>& values);
EvalReport make_report(const std::string& protocol, int n_way, int m_shot,
                       const std::vector<double>& task_accuracies_pct);

struct EvalOptions {
    long n_tasks = 10000;
    uint64_t seed = 1;
    int threads = 1;    // any value reproduces the single-thread result
    bool adapt = true;  // false scores queries against unadapted prototypes
};

// Task t draws its own generator from seed and task index, so results are
// identical for any thread count and any task-order interleaving.
std::vector<double> per_task_accuracies(const Model& model, const VectorDataset& data, int n_way,
                                        int m_shot, int q_queries, const EvalOptions& opts);
EvalReport evaluate(const Model& model, const VectorDataset& data, int n_way, int m_shot,
                    int q_queries, const EvalOptions& opts);

// Same model, same seed, growing way counts (interpolation/extrapolation).
std::vector<EvalReport> eval_way_generalization(const Model& model, const VectorDataset& data,
                                                const std::vector<int>& ways, int m_shot,
                                                int q_queries, const EvalOptions& opts);

// Transductive protocols; transformer adaptors only. The query set doubles
// as the unlabeled pool. adapt_only feeds prototypes + pool through the
// adaptor and keeps the adapted prototypes; refine additionally soft-assigns
// adapted pool rows to the prototypes and folds them in (one round).
enum class TransductiveVariant { adapt_only, refine };
EvalReport eval_transductive(const Model& model, const VectorDataset& data, int n_way, int m_shot,
                             int q_queries, TransductiveVariant variant, const EvalOptions& opts);

// Soft prototype refinement used by the transductive path, exposed for
// direct testing. Weights per pool row come from predict() against the
// current prototypes; each refined prototype is the mass-weighted mean of
// its old value (mass support_count) and the soft-assigned pool rows.
Matrix refine_prototypes(const SimilarityHead& head, const Matrix& prototypes,
                         const Matrix& pool, double support_count);

struct GeneralizedOptions {
    int n_way = 5;
    int m_shot = 1;
    int q_queries = 15;       // unseen-class queries per class per task
    int seen_queries = 25;    // seen-class test rows per task
    int proto_per_class = 0;  // 0 = half of each held-out class
    long n_tasks = 2000;
    uint64_t seed = 1;
    bool random_predictor = false;  // chance baseline over the joint label space
};

// Joint label space: seen classes 0..C-1 from held-out means, then the
// task's n_way unseen classes. calibration is subtracted from every seen
// logit before the argmax.
struct GeneralizedReport {
    long n_tasks = 0;
    int seen_classes = 0;
    int n_way = 0;
    double calibration = 0.0;
    double seen_accuracy = 0.0;      // percent, seen-origin test rows
    double unseen_accuracy = 0.0;    // percent, unseen-origin test rows
    double combined_accuracy = 0.0;  // percent, all test rows
    double combined_ci95 = 0.0;
    long seen_correct = 0, seen_total = 0;
    long unseen_correct = 0, unseen_total = 0;
};

GeneralizedReport eval_generalized(const Model& model, const VectorDataset& seen_heldout,
                                   const VectorDataset& unseen, const GeneralizedOptions& opts,
                                   double calibration);

// Cached per-row logits for one generalized task, reusable across
// calibration factors.
struct GeneralizedTaskLogits {
    Matrix logits;                // rows x (seen_classes + n_way)
    std::vector<int> truth;       // joint-space labels
    std::vector<bool> from_seen;  // bucket per row
};
std::vector<GeneralizedTaskLogits> collect_generalized_logits(const Model& model,
                                                              const VectorDataset& seen_heldout,
                                                              const VectorDataset& unseen,
                                                              const GeneralizedOptions& opts);
GeneralizedReport score_generalized(const std::vector<GeneralizedTaskLogits>& tasks,
                                    int seen_classes, int n_way, double calibration);

// Grid search for the calibration factor with the best combined accuracy
// on validation data; ties resolve to the smallest factor.
double calibration_search(const Model& model, const VectorDataset& seen_heldout,
                          const VectorDataset& val, const GeneralizedOptions& opts,
                          const std::vector<double>& grid);

} // namespace fsl
