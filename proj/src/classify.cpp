#include "fsl/classify.hpp"

#include "fsl/errors.hpp"

namespace fsl {

const char* similarity_name(Similarity s) {
    switch (s) {
    case Similarity::neg_sq_euclidean: return "sqeuclidean";
    case Similarity::cosine: return "cosine";
    }
    return "?";
}

Var compute_prototypes(Tape& tape, Var embeddings, const std::vector<int>& labels, int n_classes) {
    return tape.group_mean_rows(embeddings, labels, n_classes);
}

Matrix compute_prototypes_values(const Matrix& embeddings, const std::vector<int>& labels,
                                 int n_classes) {
    Tape tape;
    return tape.value(compute_prototypes(tape, tape.leaf(embeddings), labels, n_classes));
}

Var predict(Tape& tape, const SimilarityHead& head, Var queries, Var prototypes) {
    if (head.temperature <= 0.0)
        raise(ErrorCode::config, "predict: temperature must be positive");
    Var sim;
    switch (head.kind) {
    case Similarity::neg_sq_euclidean:
        sim = tape.scale(tape.pairwise_sqdist(queries, prototypes), -1.0);
        break;
    case Similarity::cosine:
        sim = tape.cosine_sim(queries, prototypes);
        break;
    }
    return tape.softmax_rows(tape.scale(sim, head.temperature));
}

Matrix predict_values(const SimilarityHead& head, const Matrix& queries, const Matrix& prototypes) {
    Tape tape;
    return tape.value(predict(tape, head, tape.leaf(queries), tape.leaf(prototypes)));
}

std::vector<int> argmax_rows(const Matrix& probs) {
    std::vector<int> out(probs.rows());
    for (size_t i = 0; i < probs.rows(); ++i) {
        size_t best = 0;
        for (size_t j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, best)) best = j;  // ties keep the lowest index
        out[i] = static_cast<int>(best);
    }
    return out;
}

Var cross_entropy(Tape& tape, Var probs, const std::vector<int>& labels) {
    return tape.nll_mean(probs, labels);
}

Var contrastive_loss(Tape& tape, const AdaptorBinding& adaptor, const SimilarityHead& head,
                     Var union_embeddings, const std::vector<int>& union_labels, int n_classes,
                     size_t query_begin, Rng& rng, bool training) {
    // Copy the size out: growing the tape below may reallocate its nodes.
    size_t n_rows = tape.value(union_embeddings).rows();
    if (union_labels.size() != n_rows)
        raise(ErrorCode::dimension, "contrastive_loss: label count mismatch");
    if (query_begin >= n_rows)
        raise(ErrorCode::invalid_argument, "contrastive_loss: no query rows");
    Var adapted = adapt_set(tape, adaptor, union_embeddings, union_labels, rng, training);
    Var centers = compute_prototypes(tape, adapted, union_labels, n_classes);
    Var queries = tape.slice_rows(adapted, query_begin, n_rows);
    std::vector<int> query_labels(union_labels.begin() + static_cast<long>(query_begin),
                                  union_labels.end());
    Var probs = predict(tape, head, queries, centers);
    return cross_entropy(tape, probs, query_labels);
}

} // namespace fsl
