#include "fsl/adaptors.hpp"

#include <cmath>
#include <string>

#include "fsl/errors.hpp"

namespace fsl {

const char* adaptor_kind_name(AdaptorKind kind) {
    switch (kind) {
    case AdaptorKind::identity: return "identity";
    case AdaptorKind::bilstm: return "bilstm";
    case AdaptorKind::deepsets: return "deepsets";
    case AdaptorKind::gcn: return "gcn";
    case AdaptorKind::transformer: return "transformer";
    }
    return "?";
}

AdaptorParams make_identity_adaptor(size_t d) {
    if (d == 0) raise(ErrorCode::config, "adaptor: dimension must be positive");
    return AdaptorParams{AdaptorKind::identity, d, std::monostate{}};
}

namespace {
LstmDirection make_lstm_direction(size_t d, size_t hidden, Rng& rng) {
    LstmDirection dir;
    for (size_t g = 0; g < 4; ++g) {
        dir.w_x[g] = Matrix::glorot_uniform(d, hidden, rng);
        dir.w_h[g] = Matrix::glorot_uniform(hidden, hidden, rng);
        dir.b[g] = Matrix(1, hidden);
    }
    return dir;
}
} // namespace

AdaptorParams make_bilstm_adaptor(size_t d, size_t hidden, Rng& rng) {
    if (d == 0) raise(ErrorCode::config, "bilstm: dimension must be positive");
    if (hidden == 0) hidden = d;
    if (hidden != d)
        raise(ErrorCode::config, "bilstm: hidden size must equal the embedding dimension (" +
                                     std::to_string(d) + ") for the residual sum");
    BiLstmParams p;
    p.hidden = hidden;
    p.fwd = make_lstm_direction(d, hidden, rng);
    p.bwd = make_lstm_direction(d, hidden, rng);
    return AdaptorParams{AdaptorKind::bilstm, d, std::move(p)};
}

AdaptorParams make_deepsets_adaptor(size_t d, size_t hidden, SetAggregator agg, Rng& rng) {
    if (d == 0) raise(ErrorCode::config, "deepsets: dimension must be positive");
    if (hidden == 0) hidden = 4 * d;
    DeepSetsParams p;
    p.hidden = hidden;
    p.agg = agg;
    p.g_w1 = Matrix::glorot_uniform(2 * d, hidden, rng);
    p.g_b1 = Matrix(1, hidden);
    p.g_w2 = Matrix::glorot_uniform(hidden, d, rng);
    p.g_b2 = Matrix(1, d);
    p.h_w1 = Matrix::glorot_uniform(d, hidden, rng);
    p.h_b1 = Matrix(1, hidden);
    p.h_w2 = Matrix::glorot_uniform(hidden, d, rng);
    p.h_b2 = Matrix(1, d);
    return AdaptorParams{AdaptorKind::deepsets, d, std::move(p)};
}

AdaptorParams make_gcn_adaptor(size_t d, size_t steps, size_t hidden, bool shared, Rng& rng) {
    if (d == 0) raise(ErrorCode::config, "gcn: dimension must be positive");
    if (steps == 0) raise(ErrorCode::config, "gcn: need at least one propagation step");
    if (hidden == 0) hidden = shared ? d : 4 * d;
    if (shared && hidden != d)
        raise(ErrorCode::config, "gcn: shared weights need hidden == d");
    GcnParams p;
    p.steps = steps;
    p.hidden = hidden;
    p.shared = shared;
    if (shared) {
        p.w.push_back(Matrix::glorot_uniform(d, d, rng));
    } else {
        // Dim chain d -> hidden -> ... -> hidden -> d.
        for (size_t t = 0; t < steps; ++t) {
            size_t in = (t == 0) ? d : hidden;
            size_t out = (t + 1 == steps) ? d : hidden;
            p.w.push_back(Matrix::glorot_uniform(in, out, rng));
        }
    }
    return AdaptorParams{AdaptorKind::gcn, d, std::move(p)};
}

AdaptorParams make_transformer_adaptor(size_t d, size_t heads, size_t layers, size_t d_head,
                                       double dropout, Rng& rng) {
    if (d == 0) raise(ErrorCode::config, "transformer: dimension must be positive");
    if (heads == 0) raise(ErrorCode::config, "transformer: need at least one head");
    if (layers == 0) raise(ErrorCode::config, "transformer: need at least one layer");
    if (dropout < 0.0 || dropout >= 1.0)
        raise(ErrorCode::config, "transformer: dropout must lie in [0, 1)");
    if (d_head == 0) d_head = d;
    TransformerParams p;
    p.d_head = d_head;
    p.dropout = dropout;
    for (size_t l = 0; l < layers; ++l) {
        TransformerLayer layer;
        for (size_t h = 0; h < heads; ++h) {
            TransformerHead head;
            head.w_q = Matrix::glorot_uniform(d, d_head, rng);
            head.b_q = Matrix(1, d_head);
            head.w_k = Matrix::glorot_uniform(d, d_head, rng);
            head.b_k = Matrix(1, d_head);
            head.w_v = Matrix::glorot_uniform(d, d_head, rng);
            head.b_v = Matrix(1, d_head);
            layer.heads.push_back(std::move(head));
        }
        layer.w_fc = Matrix::glorot_uniform(heads * d_head, d, rng);
        layer.b_fc = Matrix(1, d);
        layer.ln_gain = Matrix::filled(1, d, 1.0);
        layer.ln_bias = Matrix(1, d);
        p.layers.push_back(std::move(layer));
    }
    return AdaptorParams{AdaptorKind::transformer, d, std::move(p)};
}

size_t param_count(const AdaptorParams& params) {
    size_t count = 0;
    for_each_adaptor_param(const_cast<AdaptorParams&>(params),
                           [&](Matrix& m) { count += m.size(); });
    return count;
}

Matrix build_normalized_adjacency(const std::vector<int>& labels) {
    size_t n = labels.size();
    if (n == 0) raise(ErrorCode::invalid_argument, "adjacency: empty label set");
    Matrix a(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) a(i, j) = (labels[i] == labels[j]) ? 1.0 : 0.0;
    // D_ii counts A's row plus the added self loop.
    std::vector<double> dinv(n);
    for (size_t i = 0; i < n; ++i) {
        double deg = 1.0;
        for (size_t j = 0; j < n; ++j) deg += a(i, j);
        dinv[i] = 1.0 / std::sqrt(deg);
    }
    Matrix s(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double aij = a(i, j) + (i == j ? 1.0 : 0.0);
            s(i, j) = dinv[i] * aij * dinv[j];
        }
    return s;
}

AdaptorBinding bind_adaptor(Tape& tape, const AdaptorParams& p) {
    AdaptorBinding binding;
    binding.params = &p;
    for_each_adaptor_param(const_cast<AdaptorParams&>(p),
                           [&](Matrix& m) { binding.vars.push_back(tape.leaf(m)); });
    return binding;
}

namespace {

struct VarCursor {
    const std::vector<Var>* vars;
    size_t next = 0;
    Var take() { return (*vars)[next++]; }
};

// One LSTM direction over the rows of phi in the order given by `order`.
// Hidden and cell state start at zero. Returns hidden states realigned to
// input positions.
std::vector<Var> lstm_pass(Tape& tape, VarCursor& cur, Var phi, const std::vector<size_t>& order,
                           size_t hidden) {
    // Gate order matches LstmDirection: input, forget, output, candidate.
    std::array<Var, 4> w_x, w_h, b;
    for (size_t g = 0; g < 4; ++g) {
        w_x[g] = cur.take();
        w_h[g] = cur.take();
        b[g] = cur.take();
    }
    size_t n = tape.value(phi).rows();
    std::vector<Var> out(n);
    Var h = tape.leaf(Matrix(1, hidden));
    Var c = tape.leaf(Matrix(1, hidden));
    for (size_t step = 0; step < n; ++step) {
        size_t row = order[step];
        Var x = tape.slice_rows(phi, row, row + 1);
        auto gate = [&](size_t g) {
            return tape.add(tape.add(tape.matmul(x, w_x[g]), tape.matmul(h, w_h[g])), b[g]);
        };
        Var i = tape.sigmoid(gate(0));
        Var f = tape.sigmoid(gate(1));
        Var o = tape.sigmoid(gate(2));
        Var cand = tape.tanh(gate(3));
        c = tape.add(tape.hadamard(f, c), tape.hadamard(i, cand));
        h = tape.hadamard(o, tape.tanh(c));
        out[row] = h;
    }
    return out;
}

Var adapt_bilstm(Tape& tape, const BiLstmParams& p, VarCursor& cur, Var phi) {
    size_t n = tape.value(phi).rows();
    std::vector<size_t> fwd_order(n), bwd_order(n);
    for (size_t i = 0; i < n; ++i) {
        fwd_order[i] = i;
        bwd_order[i] = n - 1 - i;
    }
    std::vector<Var> h_fwd = lstm_pass(tape, cur, phi, fwd_order, p.hidden);
    std::vector<Var> h_bwd = lstm_pass(tape, cur, phi, bwd_order, p.hidden);
    std::vector<Var> rows(n);
    for (size_t i = 0; i < n; ++i)
        rows[i] = tape.add(tape.add(tape.slice_rows(phi, i, i + 1), h_fwd[i]), h_bwd[i]);
    return n == 1 ? rows[0] : tape.stack_rows(rows);
}

Var two_layer_mlp(Tape& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
    Var hidden = tape.relu(tape.add_rowvec(tape.matmul(x, w1), b1));
    return tape.add_rowvec(tape.matmul(hidden, w2), b2);
}

Var adapt_deepsets(Tape& tape, const DeepSetsParams& p, VarCursor& cur, Var phi) {
    Var g_w1 = cur.take(), g_b1 = cur.take(), g_w2 = cur.take(), g_b2 = cur.take();
    Var h_w1 = cur.take(), h_b1 = cur.take(), h_w2 = cur.take(), h_b2 = cur.take();
    Var h_out = two_layer_mlp(tape, phi, h_w1, h_b1, h_w2, h_b2);
    Var agg;
    if (p.agg == SetAggregator::max) {
        agg = tape.complement_max_rows(h_out);
    } else {
        // Complement sum = total sum - own row; an empty complement (n = 1)
        // collapses to zero either way.
        size_t n = tape.value(phi).rows();
        agg = tape.sub(tape.repeat_rows(tape.sum_rows(h_out), n), h_out);
    }
    Var g_out = two_layer_mlp(tape, tape.concat_cols(phi, agg), g_w1, g_b1, g_w2, g_b2);
    return tape.add(phi, g_out);
}

Var adapt_gcn(Tape& tape, const GcnParams& p, VarCursor& cur, Var phi,
              const std::vector<int>& labels) {
    size_t n = tape.value(phi).rows();
    if (labels.size() != n)
        raise(ErrorCode::dimension, "gcn: " + std::to_string(labels.size()) + " labels for " +
                                        std::to_string(n) + " rows");
    Var s = tape.leaf(build_normalized_adjacency(labels));
    std::vector<Var> w;
    size_t n_w = p.shared ? 1 : p.steps;
    for (size_t t = 0; t < n_w; ++t) w.push_back(cur.take());
    Var x = phi;
    for (size_t t = 0; t < p.steps; ++t) {
        Var wt = p.shared ? w[0] : w[t];
        x = tape.relu(tape.matmul(tape.matmul(s, x), wt));
    }
    return x;
}

} // namespace

Var attention_scores(Tape& tape, Var phi_q, Var phi_k, Var w_q, Var b_q, Var w_k, Var b_k,
                     size_t scale_dim) {
    if (scale_dim == 0) raise(ErrorCode::invalid_argument, "attention: scale_dim must be positive");
    Var q = tape.add_rowvec(tape.matmul(phi_q, w_q), b_q);
    Var k = tape.add_rowvec(tape.matmul(phi_k, w_k), b_k);
    Var scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                            1.0 / std::sqrt(static_cast<double>(scale_dim)));
    return tape.softmax_rows(scores);
}

namespace {

Var adapt_transformer(Tape& tape, const AdaptorParams& params, const TransformerParams& p,
                      VarCursor& cur, Var phi, Rng& rng, bool training) {
    size_t d = params.dim;
    Var x = phi;
    for (const TransformerLayer& layer : p.layers) {
        std::vector<Var> head_outs;
        for (size_t h = 0; h < layer.heads.size(); ++h) {
            Var w_q = cur.take(), b_q = cur.take();
            Var w_k = cur.take(), b_k = cur.take();
            Var w_v = cur.take(), b_v = cur.take();
            // Scores scale with the input dimension; key = value = the set.
            Var alpha = attention_scores(tape, x, x, w_q, b_q, w_k, b_k, d);
            Var v = tape.add_rowvec(tape.matmul(x, w_v), b_v);
            head_outs.push_back(tape.matmul(alpha, v));
        }
        Var merged = head_outs[0];
        for (size_t h = 1; h < head_outs.size(); ++h)
            merged = tape.concat_cols(merged, head_outs[h]);
        Var w_fc = cur.take(), b_fc = cur.take();
        Var ln_gain = cur.take(), ln_bias = cur.take();
        Var proj = tape.add_rowvec(tape.matmul(merged, w_fc), b_fc);
        if (training && p.dropout > 0.0) {
            const Matrix& pv = tape.value(proj);
            proj = tape.mul_mask(proj, dropout_mask(pv.rows(), pv.cols(), p.dropout, rng, true));
        }
        x = tape.layer_norm_rows(tape.add(x, proj), ln_gain, ln_bias);
    }
    return x;
}

} // namespace

Var adapt_set(Tape& tape, const AdaptorBinding& binding, Var phi, const std::vector<int>& labels,
              Rng& rng, bool training) {
    const AdaptorParams& params = *binding.params;
    const Matrix& pv = tape.value(phi);
    if (pv.rows() == 0) raise(ErrorCode::invalid_argument, "adapt: empty set");
    if (pv.cols() != params.dim)
        raise(ErrorCode::dimension, "adapt: set dim " + std::to_string(pv.cols()) +
                                        " does not match adaptor dim " +
                                        std::to_string(params.dim));
    VarCursor cur{&binding.vars};
    switch (params.kind) {
    case AdaptorKind::identity:
        return phi;
    case AdaptorKind::bilstm:
        return adapt_bilstm(tape, std::get<BiLstmParams>(params.p), cur, phi);
    case AdaptorKind::deepsets:
        return adapt_deepsets(tape, std::get<DeepSetsParams>(params.p), cur, phi);
    case AdaptorKind::gcn:
        return adapt_gcn(tape, std::get<GcnParams>(params.p), cur, phi, labels);
    case AdaptorKind::transformer:
        return adapt_transformer(tape, params, std::get<TransformerParams>(params.p), cur, phi,
                                 rng, training);
    }
    raise(ErrorCode::internal, "adapt: unknown adaptor kind");
}

Matrix adapt_values(const AdaptorParams& params, const Matrix& phi,
                    const std::vector<int>& labels) {
    Tape tape;
    AdaptorBinding binding = bind_adaptor(tape, params);
    Rng rng(0);  // never drawn from: dropout only runs in training mode
    Var out = adapt_set(tape, binding, tape.leaf(phi), labels, rng, false);
    return tape.value(out);
}

} // namespace fsl
