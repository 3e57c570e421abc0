#pragma once

#include <functional>
#include <vector>

#include "fsl/matrix.hpp"

namespace fsl {

// Handle to a node on a Tape.
struct Var {
    int index = -1;
    bool valid() const { return index >= 0; }
};

// Reverse-mode autodiff over Matrix values. Nodes are appended in forward
// order, so parents always precede children and a reverse index sweep is a
// valid topological order for backward().
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value);

    const Matrix& value(Var v) const;
    const Matrix& grad(Var v) const;
    size_t size() const { return nodes_.size(); }

    // Accumulates d(loss)/d(node) into every node's grad. loss must be 1x1.
    // Calling twice without zero_grads() doubles the gradients.
    void backward(Var loss);
    void zero_grads();

    // Number of probabilities clamped by nll_mean so far.
    size_t clamp_warnings() const { return clamp_warnings_; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    // m (n x d) plus a broadcast row (1 x d).
    Var add_rowvec(Var m, Var row);
    // Elementwise product with a constant mask (no gradient into the mask).
    Var mul_mask(Var a, Matrix mask);

    Var matmul(Var a, Var b);
    Var transpose(Var a);

    Var relu(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);

    Var softmax_rows(Var a);
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

    Var concat_cols(Var a, Var b);
    Var stack_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, size_t r0, size_t r1);

    Var sum_all(Var a);           // -> 1x1
    Var sum_rows(Var a);          // n x d -> 1 x d
    Var repeat_rows(Var row, size_t n);

    // Rows of the output are means of input rows sharing a group id.
    // groups[i] in [0, n_groups); every group must be non-empty.
    Var group_mean_rows(Var a, const std::vector<int>& groups, int n_groups);

    // out[i] = columnwise max over all rows j != i. Single-row input gives
    // a zero row (empty complement). Ties route the gradient to the lowest
    // row index.
    Var complement_max_rows(Var a);

    // (nq x d, nc x d) -> nq x nc squared euclidean distances.
    Var pairwise_sqdist(Var q, Var c);
    // (nq x d, nc x d) -> nq x nc cosine similarities. Zero vectors give 0.
    Var cosine_sim(Var q, Var c);

    // Mean over rows of -log(p[row, label]). Probabilities are clamped at
    // 1e-12; each clamp increments the warning counter. Rows must sum to 1.
    Var nll_mean(Var probs, const std::vector<int>& labels);

private:
    using BackwardFn = std::function<void(Tape&, std::vector<Matrix>&, int)>;

    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<int> parents;
        BackwardFn backward;
    };

    Var push(Matrix value, std::vector<int> parents, BackwardFn fn);
    const Matrix& val(int i) const { return nodes_[static_cast<size_t>(i)].value; }
    void check(Var v) const;

    std::vector<Node> nodes_;
    size_t clamp_warnings_ = 0;
};

} // namespace fsl
