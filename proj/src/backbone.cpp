#include "fsl/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsl/classify.hpp"
#include "fsl/errors.hpp"

namespace fsl {

BackboneParams make_backbone(const std::vector<size_t>& dims, Rng& rng) {
    if (dims.size() < 2) raise(ErrorCode::config, "backbone: need input and output dims");
    for (size_t d : dims)
        if (d == 0) raise(ErrorCode::config, "backbone: zero layer width");
    BackboneParams p;
    p.dims = dims;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        p.weights.push_back(Matrix::glorot_uniform(dims[i], dims[i + 1], rng));
        p.biases.push_back(Matrix(1, dims[i + 1]));
    }
    return p;
}

BackboneParams make_identity_backbone(size_t dim) {
    if (dim == 0) raise(ErrorCode::config, "backbone: dimension must be positive");
    BackboneParams p;
    p.dims = {dim};
    return p;
}

BackboneBinding bind_backbone(Tape& tape, const BackboneParams& p) {
    BackboneBinding b;
    for (size_t i = 0; i < p.weights.size(); ++i) {
        b.weights.push_back(tape.leaf(p.weights[i]));
        b.biases.push_back(tape.leaf(p.biases[i]));
    }
    return b;
}

Var embed(Tape& tape, const BackboneParams& p, const BackboneBinding& b, Var x) {
    const Matrix& xv = tape.value(x);
    if (xv.cols() != p.input_dim())
        raise(ErrorCode::dimension, "embed: input dim " + std::to_string(xv.cols()) +
                                        " does not match backbone input " +
                                        std::to_string(p.input_dim()));
    Var h = x;
    for (size_t i = 0; i < b.weights.size(); ++i)
        h = tape.relu(tape.add_rowvec(tape.matmul(h, b.weights[i]), b.biases[i]));
    return h;
}

Matrix embed_values(const BackboneParams& p, const Matrix& x) {
    Tape tape;
    BackboneBinding b = bind_backbone(tape, p);
    return tape.value(embed(tape, p, b, tape.leaf(x)));
}

namespace {

// 1-shot nearest-prototype accuracy over sampled tasks; the selection
// metric for pretraining.
double val_oneshot_accuracy(const BackboneParams& backbone, const VectorDataset& val,
                            int n_tasks, int queries, uint64_t seed) {
    int n_way = val.num_classes;
    SimilarityHead head;  // euclidean; temperature is irrelevant to argmax
    long correct = 0, total = 0;
    for (int t = 0; t < n_tasks; ++t) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(t)));
        Episode ep = sample_episode(val, n_way, 1, queries, rng);
        Matrix protos = compute_prototypes_values(embed_values(backbone, ep.support_x),
                                                  ep.support_y, n_way);
        Matrix probs = predict_values(head, embed_values(backbone, ep.query_x), protos);
        std::vector<int> pred = argmax_rows(probs);
        for (size_t i = 0; i < pred.size(); ++i) {
            correct += pred[i] == ep.query_y[i];
            ++total;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

} // namespace

PretrainResult pretrain_backbone(const BackboneParams& init, const VectorDataset& seen,
                                 const VectorDataset& val, const PretrainOptions& opts) {
    if (seen.num_classes < 2)
        raise(ErrorCode::config, "pretrain: need at least 2 seen classes");
    if (init.identity())
        raise(ErrorCode::config, "pretrain: identity backbone has nothing to train");
    if (seen.dim() != init.input_dim())
        raise(ErrorCode::dimension, "pretrain: dataset dim does not match backbone input");
    if (opts.epochs < 0) raise(ErrorCode::config, "pretrain: negative epoch count");
    if (opts.batch_size < 1) raise(ErrorCode::config, "pretrain: batch size must be positive");

    PretrainResult result;
    result.backbone = init;
    BackboneParams current = init;

    Rng rng(Rng::derive(opts.seed, 0x9e1c));
    size_t d = current.output_dim();
    size_t n_classes = static_cast<size_t>(seen.num_classes);
    Matrix cls_w = Matrix::glorot_uniform(d, n_classes, rng);
    Matrix cls_b(1, n_classes);

    const uint64_t val_stream = 0xa11;
    double best_val =
        val_oneshot_accuracy(current, val, opts.val_tasks, opts.val_queries,
                             Rng::derive(opts.seed, val_stream));
    result.history.push_back({0, 0.0, 0.0, best_val});
    result.best_epoch = 0;

    // Adam over backbone + classifier head.
    auto shapes = [&]() {
        std::vector<Matrix*> params;
        for (auto& w : current.weights) params.push_back(&w);
        for (auto& b : current.biases) params.push_back(&b);
        params.push_back(&cls_w);
        params.push_back(&cls_b);
        return params;
    };
    std::vector<Matrix*> params = shapes();
    std::vector<Matrix> m1, m2;
    for (Matrix* p : params) {
        m1.emplace_back(p->rows(), p->cols());
        m2.emplace_back(p->rows(), p->cols());
    }
    long step = 0;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    size_t n_rows = seen.rows();
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        Rng erng(Rng::derive(opts.seed, 0x5000 + static_cast<uint64_t>(epoch)));
        std::vector<size_t> order = erng.permutation(n_rows);
        double loss_sum = 0.0;
        long correct = 0;
        size_t batches = 0;
        for (size_t start = 0; start < n_rows; start += static_cast<size_t>(opts.batch_size)) {
            size_t end = std::min(n_rows, start + static_cast<size_t>(opts.batch_size));
            Matrix batch_x(end - start, seen.dim());
            std::vector<int> batch_y(end - start);
            for (size_t i = start; i < end; ++i) {
                for (size_t j = 0; j < seen.dim(); ++j)
                    batch_x(i - start, j) = seen.features(order[i], j);
                batch_y[i - start] = seen.labels[order[i]];
            }
            Tape tape;
            BackboneBinding bb = bind_backbone(tape, current);
            Var w = tape.leaf(cls_w);
            Var b = tape.leaf(cls_b);
            Var emb = embed(tape, current, bb, tape.leaf(batch_x));
            Var logits = tape.add_rowvec(tape.matmul(emb, w), b);
            Var probs = tape.softmax_rows(logits);
            Var loss = tape.nll_mean(probs, batch_y);
            double lv = tape.value(loss)(0, 0);
            if (!std::isfinite(lv))
                raise(ErrorCode::numeric, "pretrain: loss diverged at epoch " +
                                              std::to_string(epoch));
            tape.backward(loss);
            loss_sum += lv;
            ++batches;
            std::vector<int> pred = argmax_rows(tape.value(probs));
            for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch_y[i];

            // Leaf order must mirror `params`: weights, biases, classifier.
            std::vector<Var> leaves;
            for (Var v : bb.weights) leaves.push_back(v);
            for (Var v : bb.biases) leaves.push_back(v);
            leaves.push_back(w);
            leaves.push_back(b);

            ++step;
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (size_t p = 0; p < params.size(); ++p) {
                const Matrix& grad = tape.grad(leaves[p]);
                for (size_t i = 0; i < params[p]->size(); ++i) {
                    double gi = grad.data()[i];
                    double& m = m1[p].data()[i];
                    double& v2 = m2[p].data()[i];
                    m = beta1 * m + (1.0 - beta1) * gi;
                    v2 = beta2 * v2 + (1.0 - beta2) * gi * gi;
                    params[p]->data()[i] -=
                        opts.learning_rate * (m / bc1) / (std::sqrt(v2 / bc2) + eps);
                }
            }
        }
        double val_acc = val_oneshot_accuracy(current, val, opts.val_tasks, opts.val_queries,
                                              Rng::derive(opts.seed, val_stream));
        double train_acc = static_cast<double>(correct) / static_cast<double>(n_rows);
        result.history.push_back({epoch, loss_sum / static_cast<double>(batches), train_acc,
                                  val_acc});
        if (val_acc > best_val) {
            best_val = val_acc;
            result.backbone = current;
            result.best_epoch = epoch;
        }
    }
    return result;
}

} // namespace fsl
