#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fsl/episodes.hpp"
#include "fsl/model.hpp"

namespace fsl {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 0.002;
    // sgd
    double momentum = 0.9;
    double weight_decay = 5e-4;  // classic L2, added to the gradient
    bool nesterov = true;
    // adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Slot per parameter: momentum / first moment in m1, second moment in m2.
struct OptimizerState {
    std::vector<Matrix> m1;
    std::vector<Matrix> m2;
    long step = 0;
};
OptimizerState make_optimizer_state(const std::vector<ParamRef>& params);

// lr_scales multiply the configured rate per parameter (backbone fine-tune
// scaling). grads must align with params.
void sgd_step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
              const std::vector<double>& lr_scales, OptimizerState& state,
              const OptimizerConfig& cfg, double lr);
void adam_step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
               const std::vector<double>& lr_scales, OptimizerState& state,
               const OptimizerConfig& cfg, double lr);

// Episodic loss: cross-entropy of query predictions against adapted
// prototypes, plus lambda times the contrastive set loss (skipped entirely
// at lambda = 0). Gradients flow to every bound parameter.
Var episode_loss(Tape& tape, Model& model, const ModelBinding& binding, const Episode& episode,
                 double lambda, Rng& rng, bool training);

// Convenience: one fresh tape, returns the loss value only.
double episode_loss_value(Model& model, const Episode& episode, double lambda, Rng& rng,
                          bool training);

struct TrainSettings {
    int n_way = 5;
    int m_shot = 1;
    int q_queries = 15;
    double lambda = 0.1;
    int epochs = 50;
    int episodes_per_epoch = 100;
    OptimizerConfig optimizer;
    double backbone_lr_scale = 0.1;
    int lr_decay_every = 20;      // epochs; 0 disables the step decay
    double lr_decay_factor = 0.5;
    int val_tasks = 200;          // 1-shot validation tasks per epoch
    int val_n_way = 0;            // 0 = all validation classes
    int val_queries = 15;
    uint64_t seed = 1;
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_accuracy = 0.0;  // percent
    double learning_rate = 0.0;
};

struct TrainResult {
    Model model;                // best-validation weights
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Episodic training over the seen split with per-epoch validation on the
// val split. Returns the weights of the best validation epoch (epoch 0 is
// the untrained baseline). A non-finite loss aborts with a numeric error.
TrainResult train(const TrainSettings& settings, const VectorDataset& seen,
                  const VectorDataset& val, Model init,
                  const EpochCallback& on_epoch = nullptr);

} // namespace fsl
