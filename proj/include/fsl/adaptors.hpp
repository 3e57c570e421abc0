#pragma once

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

#include "fsl/matrix.hpp"
#include "fsl/rng.hpp"
#include "fsl/tape.hpp"

namespace fsl {

// Set-to-set embedding adaptors. Each maps an n x d set of embeddings to an
// adapted n x d set, conditioning every output row on the whole input set.
enum class AdaptorKind {
    identity,     // pass-through baseline
    bilstm,       // order-dependent; kept for comparison
    deepsets,     // permutation equivariant
    gcn,          // label-graph propagation, permutation equivariant
    transformer,  // set self-attention, permutation equivariant
};

const char* adaptor_kind_name(AdaptorKind kind);

enum class SetAggregator { max, sum };

// One LSTM direction. Gate order is input, forget, output, candidate.
struct LstmDirection {
    std::array<Matrix, 4> w_x;  // d x hidden
    std::array<Matrix, 4> w_h;  // hidden x hidden
    std::array<Matrix, 4> b;    // 1 x hidden
};

struct BiLstmParams {
    size_t hidden = 0;  // must equal d so psi = phi + h_fwd + h_bwd typechecks
    LstmDirection fwd;
    LstmDirection bwd;
};

// psi_x = phi_x + g([phi_x ; agg_{x' != x} h(phi_x')]).
// g: 2d -> hidden -> d and h: d -> hidden -> d, both two-layer ReLU MLPs.
struct DeepSetsParams {
    size_t hidden = 0;
    SetAggregator agg = SetAggregator::max;
    Matrix g_w1, g_b1, g_w2, g_b2;
    Matrix h_w1, h_b1, h_w2, h_b2;
};

// phi^{t+1} = relu(S phi^t W_t) with S the normalized same-class adjacency.
// Step dims run d -> hidden -> ... -> d; shared weights need hidden == d.
struct GcnParams {
    size_t steps = 2;
    size_t hidden = 0;
    bool shared = false;
    std::vector<Matrix> w;  // one per step, or a single shared matrix
};

struct TransformerHead {
    Matrix w_q, b_q;  // d x d_head, 1 x d_head
    Matrix w_k, b_k;
    Matrix w_v, b_v;
};

struct TransformerLayer {
    std::vector<TransformerHead> heads;
    Matrix w_fc, b_fc;        // (heads*d_head) x d, 1 x d
    Matrix ln_gain, ln_bias;  // 1 x d
};

struct TransformerParams {
    size_t d_head = 0;
    double dropout = 0.5;
    std::vector<TransformerLayer> layers;
};

struct AdaptorParams {
    AdaptorKind kind = AdaptorKind::identity;
    size_t dim = 0;
    std::variant<std::monostate, BiLstmParams, DeepSetsParams, GcnParams, TransformerParams> p;
};

AdaptorParams make_identity_adaptor(size_t d);
// hidden == 0 picks the default for each kind (bilstm d, the others 4d).
AdaptorParams make_bilstm_adaptor(size_t d, size_t hidden, Rng& rng);
AdaptorParams make_deepsets_adaptor(size_t d, size_t hidden, SetAggregator agg, Rng& rng);
AdaptorParams make_gcn_adaptor(size_t d, size_t steps, size_t hidden, bool shared, Rng& rng);
AdaptorParams make_transformer_adaptor(size_t d, size_t heads, size_t layers, size_t d_head,
                                       double dropout, Rng& rng);

size_t param_count(const AdaptorParams& params);

// S = D^{-1/2} (A + I) D^{-1/2} with A_ij = 1 iff labels match (A_ii = 1)
// and D_ii = sum_j A_ij + 1.
Matrix build_normalized_adjacency(const std::vector<int>& labels);

// Row-softmax of scaled query-key inner products. scale_dim is the
// dimension whose square root divides the scores.
Var attention_scores(Tape& tape, Var phi_q, Var phi_k, Var w_q, Var b_q, Var w_k, Var b_k,
                     size_t scale_dim);

struct AdaptorBinding {
    const AdaptorParams* params = nullptr;
    std::vector<Var> vars;  // leaves in enumeration order
};
AdaptorBinding bind_adaptor(Tape& tape, const AdaptorParams& p);

// Adapts the set on the tape. labels are only read by the GCN (adjacency);
// rng is only drawn from by transformer dropout when training is true.
Var adapt_set(Tape& tape, const AdaptorBinding& binding, Var phi, const std::vector<int>& labels,
              Rng& rng, bool training);

// Value-level wrapper; dropout is off (inference behaviour).
Matrix adapt_values(const AdaptorParams& params, const Matrix& phi, const std::vector<int>& labels);

// Visits every parameter matrix in a stable order (the checkpoint and
// optimizer order).
template <typename F>
void for_each_adaptor_param(AdaptorParams& params, F&& f) {
    switch (params.kind) {
    case AdaptorKind::identity:
        break;
    case AdaptorKind::bilstm: {
        auto& p = std::get<BiLstmParams>(params.p);
        for (auto* dir : {&p.fwd, &p.bwd})
            for (size_t g = 0; g < 4; ++g) {
                f(dir->w_x[g]);
                f(dir->w_h[g]);
                f(dir->b[g]);
            }
        break;
    }
    case AdaptorKind::deepsets: {
        auto& p = std::get<DeepSetsParams>(params.p);
        f(p.g_w1); f(p.g_b1); f(p.g_w2); f(p.g_b2);
        f(p.h_w1); f(p.h_b1); f(p.h_w2); f(p.h_b2);
        break;
    }
    case AdaptorKind::gcn: {
        auto& p = std::get<GcnParams>(params.p);
        for (auto& w : p.w) f(w);
        break;
    }
    case AdaptorKind::transformer: {
        auto& p = std::get<TransformerParams>(params.p);
        for (auto& layer : p.layers) {
            for (auto& head : layer.heads) {
                f(head.w_q); f(head.b_q);
                f(head.w_k); f(head.b_k);
                f(head.w_v); f(head.b_v);
            }
            f(layer.w_fc); f(layer.b_fc);
            f(layer.ln_gain); f(layer.ln_bias);
        }
        break;
    }
    }
}

} // namespace fsl
