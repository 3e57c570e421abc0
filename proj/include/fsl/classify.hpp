#pragma once

#include <vector>

#include "fsl/adaptors.hpp"
#include "fsl/matrix.hpp"
#include "fsl/tape.hpp"

namespace fsl {

enum class Similarity { neg_sq_euclidean, cosine };

const char* similarity_name(Similarity s);

// Similarity plus softmax temperature. Default temperatures: 1/64 for the
// euclidean head (distances need small temperatures), 1 for cosine.
struct SimilarityHead {
    Similarity kind = Similarity::neg_sq_euclidean;
    double temperature = 1.0 / 64.0;
};

// Class means of embeddings grouped by label. Every class in
// [0, n_classes) must appear at least once.
Var compute_prototypes(Tape& tape, Var embeddings, const std::vector<int>& labels, int n_classes);
Matrix compute_prototypes_values(const Matrix& embeddings, const std::vector<int>& labels,
                                 int n_classes);

// Row-stochastic class probabilities: softmax over temperature-scaled
// similarities between each query row and each prototype row.
Var predict(Tape& tape, const SimilarityHead& head, Var queries, Var prototypes);
Matrix predict_values(const SimilarityHead& head, const Matrix& queries, const Matrix& prototypes);

// Argmax per row; ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Matrix& probs);

// Mean negative log likelihood of the labels under the given row-stochastic
// probabilities (clamped at 1e-12, counted on the tape).
Var cross_entropy(Tape& tape, Var probs, const std::vector<int>& labels);

// Auxiliary set-level loss: adapts the whole support+query union, takes
// class centers over the adapted union, and scores the adapted query rows
// against those centers. query_begin is the first query row in the union.
Var contrastive_loss(Tape& tape, const AdaptorBinding& adaptor, const SimilarityHead& head,
                     Var union_embeddings, const std::vector<int>& union_labels, int n_classes,
                     size_t query_begin, Rng& rng, bool training);

} // namespace fsl
