#pragma once

#include <cstdint>
#include <vector>

#include "fsl/episodes.hpp"
#include "fsl/matrix.hpp"
#include "fsl/rng.hpp"
#include "fsl/tape.hpp"

namespace fsl {

// Fully connected embedding network. dims = [input, hidden..., output];
// ReLU follows every layer. An empty layer list is the identity map.
struct BackboneParams {
    std::vector<size_t> dims;
    std::vector<Matrix> weights;  // dims[i] x dims[i+1]
    std::vector<Matrix> biases;   // 1 x dims[i+1]

    size_t input_dim() const { return dims.empty() ? 0 : dims.front(); }
    size_t output_dim() const { return dims.empty() ? 0 : dims.back(); }
    bool identity() const { return weights.empty(); }
};

BackboneParams make_backbone(const std::vector<size_t>& dims, Rng& rng);
// Identity embedding for raw-feature runs; dim is recorded for checks.
BackboneParams make_identity_backbone(size_t dim);

struct BackboneBinding {
    std::vector<Var> weights;
    std::vector<Var> biases;
};
BackboneBinding bind_backbone(Tape& tape, const BackboneParams& p);

// x: n x input_dim -> n x output_dim.
Var embed(Tape& tape, const BackboneParams& p, const BackboneBinding& b, Var x);
Matrix embed_values(const BackboneParams& p, const Matrix& x);

struct PretrainOptions {
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.002;
    int val_tasks = 200;      // 1-shot tasks scored after every epoch
    int val_queries = 15;     // query rows per class in those tasks
    uint64_t seed = 1;
};

struct PretrainRecord {
    int epoch = 0;            // 0 is the untrained baseline
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct PretrainResult {
    BackboneParams backbone;
    std::vector<PretrainRecord> history;
    int best_epoch = 0;
};

// Trains backbone + linear softmax head to classify every seen class, then
// returns the epoch weights with the best validation score. Validation
// samples val_tasks 1-shot tasks over all val classes and classifies
// queries by nearest class prototype. The returned weights never score
// below the epoch-0 baseline.
PretrainResult pretrain_backbone(const BackboneParams& init, const VectorDataset& seen,
                                 const VectorDataset& val, const PretrainOptions& opts);

} // namespace fsl
