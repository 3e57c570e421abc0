#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsl/episodes.hpp"
#include "fsl/model.hpp"
#include "fsl/training.hpp"

namespace fsl {

// ---- dataset files -------------------------------------------------------
//
// Versioned text format:
//   fsl-dataset v1
//   classes <C>
//   dim <D>
//   rows <R>
//   <label>,<v0>,...,<v{D-1}>     (R data lines)
//
// Values are written with enough digits to round-trip doubles exactly.

void save_dataset(const VectorDataset& data, const std::string& path);
VectorDataset load_dataset(const std::string& path);

// ---- checkpoints ----------------------------------------------------------
//
// Binary little-endian format, 64-bit doubles written verbatim, so a
// save/load cycle is bitwise exact. A version field guards the layout and
// a trailing checksum catches truncation.

struct SeedLineage {
    uint64_t master = 0;
    uint64_t pretrain = 0;
    uint64_t train = 0;
};

struct Checkpoint {
    Model model;
    SeedLineage seeds;
    std::string config_json;  // experiment config snapshot, may be empty
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---- experiment configuration ----------------------------------------------
//
// Key/value tree loaded from JSON; every key can also be set from a dotted
// path string ("train.lr=0.001"). config_schema() documents the keys.

struct DataConfig {
    int classes = 60;
    int per_class = 40;
    int dim = 32;
    double spread = 1.0;
    double separation = 3.0;
    uint64_t seed = 1;
};

struct SplitConfig {
    double seen_frac = 0.5;
    double val_frac = 0.25;
    uint64_t seed = 2;
};

struct BackboneConfig {
    std::vector<int> hidden = {64};
    int embed_dim = 32;  // 0 = identity backbone
};

struct AdaptorConfig {
    AdaptorKind kind = AdaptorKind::transformer;
    int heads = 1;
    int layers = 1;
    int d_head = 0;      // 0 = embedding dim
    double dropout = 0.5;
    int gcn_steps = 2;
    int gcn_hidden = 0;  // 0 = 4 * embedding dim
    bool gcn_shared = false;
    int deepsets_hidden = 0;
    SetAggregator deepsets_agg = SetAggregator::max;
    int bilstm_hidden = 0;
};

struct HeadConfig {
    Similarity similarity = Similarity::neg_sq_euclidean;
    double temperature = 0.0;  // 0 = default for the similarity
};

struct PretrainBlock {
    int epochs = 20;
    int batch_size = 64;
    double learning_rate = 0.002;
    int val_tasks = 200;
    uint64_t seed = 3;
};

struct TrainBlock {
    int n_way = 5;
    int m_shot = 1;
    int q_queries = 15;
    double lambda = 0.1;
    int epochs = 30;
    int episodes_per_epoch = 100;
    std::string optimizer = "adam";
    double learning_rate = 0.002;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = true;
    double backbone_lr_scale = 0.1;
    int lr_decay_every = 20;
    double lr_decay_factor = 0.5;
    int val_tasks = 200;
    bool pre_average = true;
    uint64_t seed = 4;
};

struct EvalBlock {
    int n_way = 5;
    int m_shot = 1;
    int q_queries = 15;
    long tasks = 10000;
    int threads = 1;
    bool adapt = true;
    std::vector<int> ways = {5, 10, 15, 20};
    std::string transductive = "refine";  // or "adapt-only"
    uint64_t seed = 5;
};

struct GeneralizedBlock {
    int holdout_per_class = 20;
    int proto_per_class = 10;
    int seen_queries = 25;
    long tasks = 2000;
    double calibration = 0.0;
    bool search_calibration = false;
    std::vector<double> grid = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0};
    uint64_t seed = 6;
};

struct ExperimentConfig {
    DataConfig data;
    SplitConfig split;
    BackboneConfig backbone;
    AdaptorConfig adaptor;
    HeadConfig head;
    PretrainBlock pretrain;
    TrainBlock train;
    EvalBlock eval;
    GeneralizedBlock generalized;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
// Sets one field from a dotted path; unknown keys or unparsable values are
// config errors.
void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_get(const ExperimentConfig& cfg, const std::string& key);
// One "key  type  default  description" line per setting.
std::string config_schema();

AdaptorKind adaptor_kind_from_name(const std::string& name);
Similarity similarity_from_name(const std::string& name);
double default_temperature(Similarity s);

} // namespace fsl
