#pragma once

#include <cstdint>
#include <vector>

#include "fsl/matrix.hpp"
#include "fsl/rng.hpp"

namespace fsl {

// A labelled pool of feature vectors. Labels are dense ids 0..classes-1
// and every class has at least one row.
struct VectorDataset {
    Matrix features;                           // rows x dim
    std::vector<int> labels;                   // size rows
    int num_classes = 0;
    std::vector<std::vector<int>> class_rows;  // per class, row indices
    std::vector<int> source_ids;               // per class, id in the parent dataset

    size_t rows() const { return features.rows(); }
    size_t dim() const { return features.cols(); }
};

// Validates labels, builds the class index. source_ids defaults to identity.
VectorDataset make_dataset(Matrix features, std::vector<int> labels);

// Disjoint class-level partition. Fractions apply to the class count; the
// remainder becomes the unseen split. Each split must be non-empty.
struct Splits {
    VectorDataset seen;
    VectorDataset val;
    VectorDataset unseen;
};

Splits make_splits(const VectorDataset& data, double seen_frac, double val_frac, Rng& rng);

// One N-way M-shot task. Class ids are remapped to 0..n_way-1; class_ids
// maps them back to the source dataset. Support and query rows are sampled
// without replacement from the same class, so they never overlap.
struct Episode {
    int n_way = 0;
    int m_shot = 0;
    int q_queries = 0;
    Matrix support_x;             // (n_way*m_shot) x dim, grouped by class
    std::vector<int> support_y;
    Matrix query_x;               // (n_way*q_queries) x dim, grouped by class
    std::vector<int> query_y;
    std::vector<int> class_ids;
};

Episode sample_episode(const VectorDataset& data, int n_way, int m_shot, int q_queries, Rng& rng);

// Isotropic Gaussian clusters: class means uniform in [-separation,
// separation]^dim, per-class rows mean + spread * N(0, I).
VectorDataset gen_synthetic(int num_classes, int per_class, int dim, double spread,
                            double separation, Rng& rng);

// Carves the first per_class rows of every class into one dataset and the
// rest into another. Used to hold out seen-class rows before training.
struct ClasswiseSplit {
    VectorDataset taken;
    VectorDataset rest;
};
ClasswiseSplit split_per_class(const VectorDataset& data, int per_class);

} // namespace fsl
