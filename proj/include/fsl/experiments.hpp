#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsl/evaluation.hpp"
#include "fsl/io.hpp"

namespace fsl {

// Config-driven runners behind the CLI subcommands. Each builds its inputs
// (dataset, splits, model) from the config alone, so a config + seed pins
// the whole run.

VectorDataset run_gen_data(const ExperimentConfig& cfg);

Model build_model(const ExperimentConfig& cfg, Rng& rng);
Splits build_splits(const ExperimentConfig& cfg, const VectorDataset& data);
// Seen split with the generalized holdout removed / the holdout itself.
ClasswiseSplit carve_seen_holdout(const ExperimentConfig& cfg, const VectorDataset& seen);

PretrainResult run_pretrain(const ExperimentConfig& cfg, const VectorDataset& data);
// Fresh model with its backbone replaced by already-pretrained weights. The
// adaptor init matches a from-scratch build with the same train seed.
Model assemble_pretrained(const ExperimentConfig& cfg, BackboneParams backbone);
TrainResult run_train(const ExperimentConfig& cfg, const VectorDataset& data,
                      const Model* init_model, const EpochCallback& on_epoch = nullptr);

EvalReport run_eval(const ExperimentConfig& cfg, const Model& model, const VectorDataset& data);
std::vector<EvalReport> run_eval_ways(const ExperimentConfig& cfg, const Model& model,
                                      const VectorDataset& data);
EvalReport run_eval_transductive(const ExperimentConfig& cfg, const Model& model,
                                 const VectorDataset& data);
GeneralizedReport run_eval_generalized(const ExperimentConfig& cfg, const Model& model,
                                       const VectorDataset& data, double* chosen_calibration);

// Finite-difference check of episode_loss for the configured adaptor at
// dimension d; returns the max relative error over n_seeds trials.
double run_grad_check(AdaptorKind kind, size_t d, uint64_t seed, int n_seeds);

struct InvarianceResult {
    AdaptorKind kind = AdaptorKind::identity;
    bool equivariant_expected = true;
    double max_deviation = 0.0;        // over equivariance trials
    bool violation_found = false;      // order sensitivity (bilstm)
    double violation_magnitude = 0.0;
    bool passed = false;
};
// Exhaustive permutations at n = 5 plus random permutations at n = 32.
InvarianceResult run_invariance_check(AdaptorKind kind, size_t d, uint64_t seed, double tolerance);

struct ParamCountRow {
    AdaptorKind kind;
    size_t count;
};
std::vector<ParamCountRow> run_param_count(const ExperimentConfig& cfg, size_t d);

// kind "tasks": per-task accuracy rows. kind "ways": one row per way count.
void run_plot_dump(const ExperimentConfig& cfg, const Model& model, const VectorDataset& data,
                   const std::string& kind, const std::string& out_path);

} // namespace fsl
