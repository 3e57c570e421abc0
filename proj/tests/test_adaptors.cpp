#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "fsl/adaptors.hpp"
#include "helpers.hpp"

using namespace fsl;
using fsl_test::error_code_of;

namespace {

Matrix permute_rows(const Matrix& m, const std::vector<size_t>& perm) {
    Matrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

// y = x W + b with b broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y(x.rows(), w.cols());
    for (size_t i = 0; i < x.rows(); ++i)
        for (size_t j = 0; j < w.cols(); ++j) {
            double s = b(0, j);
            for (size_t k = 0; k < x.cols(); ++k) s += x(i, k) * w(k, j);
            y(i, j) = s;
        }
    return y;
}

Matrix relu_of(Matrix m) {
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = std::max(0.0, m.data()[i]);
    return m;
}

Matrix softmax_rows_oracle(const Matrix& m) {
    Matrix p(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i) {
        double mx = m(i, 0);
        for (size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
        double z = 0.0;
        for (size_t j = 0; j < m.cols(); ++j) z += std::exp(m(i, j) - mx);
        for (size_t j = 0; j < m.cols(); ++j) p(i, j) = std::exp(m(i, j) - mx) / z;
    }
    return p;
}

Matrix layer_norm_oracle(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
    Matrix y(x.rows(), x.cols());
    for (size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= static_cast<double>(x.cols());
        double var = 0.0;
        for (size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= static_cast<double>(x.cols());
        for (size_t j = 0; j < x.cols(); ++j)
            y(i, j) = gain(0, j) * (x(i, j) - mean) / std::sqrt(var + eps) + bias(0, j);
    }
    return y;
}

} // namespace

TEST_CASE("normalized adjacency matches hand values") {
    Matrix s = build_normalized_adjacency({0, 0, 1});
    // Same-class matrix with diagonal: rows 0,1 connect; row 2 is alone.
    // Degrees with the extra self loop: 3, 3, 2.
    CHECK(s(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s(0, 2) == doctest::Approx(0.0));
    CHECK(s(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s(2, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(2, 0) == doctest::Approx(0.0));
    CHECK(error_code_of([] { build_normalized_adjacency({}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("transformer forward matches the scalar oracle") {
    size_t d = 3, d_head = 2;
    Rng rng(81);
    AdaptorParams params = make_transformer_adaptor(d, 1, 1, d_head, 0.0, rng);
    const auto& tp = std::get<TransformerParams>(params.p);
    const TransformerLayer& layer = tp.layers[0];
    const TransformerHead& head = layer.heads[0];

    Matrix x = Matrix::gaussian(4, d, rng);
    Matrix got = adapt_values(params, x, {0, 0, 1, 1});

    Matrix q = affine(x, head.w_q, head.b_q);
    Matrix k = affine(x, head.w_k, head.b_k);
    Matrix v = affine(x, head.w_v, head.b_v);
    Matrix scores(4, 4);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (size_t a = 0; a < d_head; ++a) s += q(i, a) * k(j, a);
            scores(i, j) = s / std::sqrt(static_cast<double>(d));
        }
    Matrix alpha = softmax_rows_oracle(scores);
    Matrix head_out(4, d_head);
    for (size_t i = 0; i < 4; ++i)
        for (size_t a = 0; a < d_head; ++a) {
            double s = 0.0;
            for (size_t j = 0; j < 4; ++j) s += alpha(i, j) * v(j, a);
            head_out(i, a) = s;
        }
    Matrix proj = affine(head_out, layer.w_fc, layer.b_fc);
    Matrix residual(4, d);
    for (size_t i = 0; i < residual.size(); ++i)
        residual.data()[i] = x.data()[i] + proj.data()[i];
    Matrix want = layer_norm_oracle(residual, layer.ln_gain, layer.ln_bias, 1e-5);

    CHECK(max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("attention rows are probability distributions") {
    size_t d = 5;
    Rng rng(82);
    AdaptorParams params = make_transformer_adaptor(d, 2, 1, 3, 0.0, rng);
    const auto& head = std::get<TransformerParams>(params.p).layers[0].heads[0];
    Matrix x = Matrix::gaussian(6, d, rng);

    Tape t;
    Var alpha = attention_scores(t, t.leaf(x), t.leaf(x), t.leaf(head.w_q), t.leaf(head.b_q),
                                 t.leaf(head.w_k), t.leaf(head.b_k), d);
    const Matrix& a = t.value(alpha);
    REQUIRE(a.rows() == 6);
    REQUIRE(a.cols() == 6);
    for (size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < 6; ++j) {
            CHECK(a(i, j) >= 0.0);
            sum += a(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("multi-head concat keeps head order") {
    size_t d = 3, d_head = 2;
    Rng rng(83);
    AdaptorParams params = make_transformer_adaptor(d, 2, 1, d_head, 0.0, rng);
    const auto& tp = std::get<TransformerParams>(params.p);
    const TransformerLayer& layer = tp.layers[0];
    Matrix x = Matrix::gaussian(3, d, rng);
    Matrix got = adapt_values(params, x, {0, 1, 0});

    Matrix merged(3, 2 * d_head);
    for (size_t h = 0; h < 2; ++h) {
        const TransformerHead& head = layer.heads[h];
        Matrix q = affine(x, head.w_q, head.b_q);
        Matrix k = affine(x, head.w_k, head.b_k);
        Matrix v = affine(x, head.w_v, head.b_v);
        Matrix scores(3, 3);
        for (size_t i = 0; i < 3; ++i)
            for (size_t j = 0; j < 3; ++j) {
                double s = 0.0;
                for (size_t a = 0; a < d_head; ++a) s += q(i, a) * k(j, a);
                scores(i, j) = s / std::sqrt(static_cast<double>(d));
            }
        Matrix alpha = softmax_rows_oracle(scores);
        for (size_t i = 0; i < 3; ++i)
            for (size_t a = 0; a < d_head; ++a) {
                double s = 0.0;
                for (size_t j = 0; j < 3; ++j) s += alpha(i, j) * v(j, a);
                merged(i, h * d_head + a) = s;
            }
    }
    Matrix proj = affine(merged, layer.w_fc, layer.b_fc);
    Matrix residual(3, d);
    for (size_t i = 0; i < residual.size(); ++i)
        residual.data()[i] = x.data()[i] + proj.data()[i];
    Matrix want = layer_norm_oracle(residual, layer.ln_gain, layer.ln_bias, 1e-5);
    CHECK(max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("gcn forward matches the scalar oracle") {
    size_t d = 3;
    Rng rng(84);
    AdaptorParams params = make_gcn_adaptor(d, 2, 0, false, rng);
    const auto& gp = std::get<GcnParams>(params.p);
    REQUIRE(gp.w.size() == 2);
    CHECK(gp.w[0].rows() == d);
    CHECK(gp.w[0].cols() == 4 * d);
    CHECK(gp.w[1].rows() == 4 * d);
    CHECK(gp.w[1].cols() == d);

    std::vector<int> labels{0, 0, 1, 1, 2};
    Matrix x = Matrix::gaussian(5, d, rng);
    Matrix got = adapt_values(params, x, labels);

    Matrix s = build_normalized_adjacency(labels);
    Matrix cur = x;
    for (const Matrix& w : gp.w) {
        Matrix sx(5, cur.cols());
        for (size_t i = 0; i < 5; ++i)
            for (size_t j = 0; j < cur.cols(); ++j) {
                double acc = 0.0;
                for (size_t k = 0; k < 5; ++k) acc += s(i, k) * cur(k, j);
                sx(i, j) = acc;
            }
        Matrix nxt(5, w.cols());
        for (size_t i = 0; i < 5; ++i)
            for (size_t j = 0; j < w.cols(); ++j) {
                double acc = 0.0;
                for (size_t k = 0; k < w.rows(); ++k) acc += sx(i, k) * w(k, j);
                nxt(i, j) = std::max(0.0, acc);
            }
        cur = nxt;
    }
    CHECK(max_abs_diff(got, cur) < 1e-12);
}

TEST_CASE("shared gcn weights reuse one matrix per step") {
    size_t d = 4;
    Rng rng(85);
    AdaptorParams params = make_gcn_adaptor(d, 3, 0, true, rng);
    const auto& gp = std::get<GcnParams>(params.p);
    REQUIRE(gp.w.size() == 1);
    CHECK(gp.w[0].rows() == d);
    CHECK(gp.w[0].cols() == d);

    std::vector<int> labels{0, 1, 0};
    Matrix x = Matrix::gaussian(3, d, rng);
    Matrix got = adapt_values(params, x, labels);

    Matrix s = build_normalized_adjacency(labels);
    Matrix cur = x;
    for (size_t step = 0; step < 3; ++step) {
        Matrix sx = matmul(s, cur);
        cur = relu_of(matmul(sx, gp.w[0]));
    }
    CHECK(max_abs_diff(got, cur) < 1e-12);
}

TEST_CASE("deepsets forward matches a brute force oracle") {
    size_t d = 2, hidden = 3;
    Rng rng(86);
    Matrix x = Matrix::gaussian(4, d, rng);

    for (SetAggregator agg : {SetAggregator::max, SetAggregator::sum}) {
        Rng make_rng(87);
        AdaptorParams params = make_deepsets_adaptor(d, hidden, agg, make_rng);
        const auto& dp = std::get<DeepSetsParams>(params.p);
        Matrix got = adapt_values(params, x, {0, 0, 1, 1});

        Matrix h_out = affine(relu_of(affine(x, dp.h_w1, dp.h_b1)), dp.h_w2, dp.h_b2);
        Matrix aggregated(4, d);
        for (size_t i = 0; i < 4; ++i)
            for (size_t j = 0; j < d; ++j) {
                if (agg == SetAggregator::max) {
                    double best = -1e300;
                    for (size_t k = 0; k < 4; ++k)
                        if (k != i) best = std::max(best, h_out(k, j));
                    aggregated(i, j) = best;
                } else {
                    double sum = 0.0;
                    for (size_t k = 0; k < 4; ++k)
                        if (k != i) sum += h_out(k, j);
                    aggregated(i, j) = sum;
                }
            }
        Matrix cat(4, 2 * d);
        for (size_t i = 0; i < 4; ++i) {
            for (size_t j = 0; j < d; ++j) cat(i, j) = x(i, j);
            for (size_t j = 0; j < d; ++j) cat(i, d + j) = aggregated(i, j);
        }
        Matrix g_out = affine(relu_of(affine(cat, dp.g_w1, dp.g_b1)), dp.g_w2, dp.g_b2);
        Matrix want(4, d);
        for (size_t i = 0; i < want.size(); ++i)
            want.data()[i] = x.data()[i] + g_out.data()[i];
        CHECK(max_abs_diff(got, want) < 1e-11);
    }
}

TEST_CASE("deepsets on a single row aggregates nothing") {
    size_t d = 3;
    Rng rng(88);
    Matrix x = Matrix::gaussian(1, d, rng);
    for (SetAggregator agg : {SetAggregator::max, SetAggregator::sum}) {
        Rng make_rng(89);
        AdaptorParams params = make_deepsets_adaptor(d, 4, agg, make_rng);
        const auto& dp = std::get<DeepSetsParams>(params.p);
        Matrix got = adapt_values(params, x, {0});

        Matrix cat(1, 2 * d);
        for (size_t j = 0; j < d; ++j) cat(0, j) = x(0, j);
        Matrix g_out = affine(relu_of(affine(cat, dp.g_w1, dp.g_b1)), dp.g_w2, dp.g_b2);
        for (size_t j = 0; j < d; ++j)
            CHECK(got(0, j) == doctest::Approx(x(0, j) + g_out(0, j)).epsilon(1e-11));
    }
}

TEST_CASE("bilstm forward matches a scalar lstm") {
    size_t d = 3;
    Rng rng(90);
    AdaptorParams params = make_bilstm_adaptor(d, 0, rng);
    const auto& bp = std::get<BiLstmParams>(params.p);
    REQUIRE(bp.hidden == d);
    Matrix x = Matrix::gaussian(4, d, rng);
    Matrix got = adapt_values(params, x, {0, 1, 0, 1});

    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto run_direction = [&](const LstmDirection& dir, bool backward) {
        size_t n = x.rows();
        Matrix out(n, d);
        std::vector<double> h(d, 0.0), c(d, 0.0);
        for (size_t step = 0; step < n; ++step) {
            size_t row = backward ? n - 1 - step : step;
            std::array<std::vector<double>, 4> gates;
            for (size_t g = 0; g < 4; ++g) {
                gates[g].assign(d, 0.0);
                for (size_t j = 0; j < d; ++j) {
                    double s = dir.b[g](0, j);
                    for (size_t k = 0; k < d; ++k) {
                        s += x(row, k) * dir.w_x[g](k, j);
                        s += h[k] * dir.w_h[g](k, j);
                    }
                    gates[g][j] = s;
                }
            }
            for (size_t j = 0; j < d; ++j) {
                double in = sigmoid(gates[0][j]);
                double forget = sigmoid(gates[1][j]);
                double outg = sigmoid(gates[2][j]);
                double cand = std::tanh(gates[3][j]);
                c[j] = forget * c[j] + in * cand;
                h[j] = outg * std::tanh(c[j]);
                out(row, j) = h[j];
            }
        }
        return out;
    };
    Matrix h_fwd = run_direction(bp.fwd, false);
    Matrix h_bwd = run_direction(bp.bwd, true);
    Matrix want(4, d);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < d; ++j) want(i, j) = x(i, j) + h_fwd(i, j) + h_bwd(i, j);
    CHECK(max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("parameter counts match hand sums") {
    Rng rng(91);
    CHECK(param_count(make_identity_adaptor(6)) == 0);
    for (size_t d : {4u, 8u, 64u}) {
        // Two directions, four gates each holding d*d + d*d + d entries.
        CHECK(param_count(make_bilstm_adaptor(d, 0, rng)) == 16 * d * d + 8 * d);
        // g: 2d*4d + 4d + 4d*d + d, h: d*4d + 4d + 4d*d + d.
        CHECK(param_count(make_deepsets_adaptor(d, 0, SetAggregator::max, rng)) ==
              20 * d * d + 10 * d);
        // Two steps through a 4d hidden layer.
        CHECK(param_count(make_gcn_adaptor(d, 2, 0, false, rng)) == 8 * d * d);
        CHECK(param_count(make_gcn_adaptor(d, 2, 0, true, rng)) == d * d);
        // One head: 3 (d*d + d) projections, d*d + d output, 2d norm.
        CHECK(param_count(make_transformer_adaptor(d, 1, 1, 0, 0.5, rng)) ==
              4 * d * d + 6 * d);
    }
    // At 64 dims the attention adaptor is the smallest of the four.
    size_t d = 64;
    size_t tr = param_count(make_transformer_adaptor(d, 1, 1, 0, 0.5, rng));
    CHECK(tr == 16768);
    CHECK(param_count(make_gcn_adaptor(d, 2, 0, false, rng)) == 32768);
    CHECK(param_count(make_bilstm_adaptor(d, 0, rng)) == 66048);
    CHECK(param_count(make_deepsets_adaptor(d, 0, SetAggregator::max, rng)) == 82560);
}

TEST_CASE("set adaptors commute with row permutations") {
    size_t d = 4;
    Rng rng(92);
    Matrix x = Matrix::gaussian(6, d, rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2};
    std::vector<size_t> perm{3, 0, 5, 2, 4, 1};
    Matrix px = permute_rows(x, perm);
    std::vector<int> plabels(labels.size());
    for (size_t i = 0; i < perm.size(); ++i) plabels[i] = labels[perm[i]];

    Rng mk(93);
    std::vector<AdaptorParams> equivariant;
    equivariant.push_back(make_deepsets_adaptor(d, 0, SetAggregator::max, mk));
    equivariant.push_back(make_deepsets_adaptor(d, 0, SetAggregator::sum, mk));
    equivariant.push_back(make_gcn_adaptor(d, 2, 0, false, mk));
    equivariant.push_back(make_transformer_adaptor(d, 2, 1, 0, 0.5, mk));
    for (const AdaptorParams& params : equivariant) {
        Matrix direct = adapt_values(params, px, plabels);
        Matrix routed = permute_rows(adapt_values(params, x, labels), perm);
        CHECK(max_abs_diff(direct, routed) < 1e-9);
    }

    // The recurrent adaptor reads the rows in order, so some permutation
    // must change its output.
    AdaptorParams bilstm = make_bilstm_adaptor(d, 0, mk);
    Matrix direct = adapt_values(bilstm, px, plabels);
    Matrix routed = permute_rows(adapt_values(bilstm, x, labels), perm);
    CHECK(max_abs_diff(direct, routed) > 1e-6);
}

TEST_CASE("adaptor construction and input validation") {
    Rng rng(94);
    CHECK(error_code_of([&] { make_identity_adaptor(0); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_bilstm_adaptor(4, 5, rng); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_gcn_adaptor(4, 0, 0, false, rng); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_gcn_adaptor(4, 2, 8, true, rng); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_transformer_adaptor(4, 0, 1, 0, 0.5, rng); }) ==
          ErrorCode::config);
    CHECK(error_code_of([&] { make_transformer_adaptor(4, 1, 0, 0, 0.5, rng); }) ==
          ErrorCode::config);
    CHECK(error_code_of([&] { make_transformer_adaptor(4, 1, 1, 0, 1.0, rng); }) ==
          ErrorCode::config);

    AdaptorParams gcn = make_gcn_adaptor(3, 2, 0, false, rng);
    Matrix x = Matrix::gaussian(4, 3, rng);
    CHECK(error_code_of([&] { adapt_values(gcn, x, {0, 1}); }) == ErrorCode::dimension);
    Matrix wrong = Matrix::gaussian(4, 5, rng);
    CHECK(error_code_of([&] { adapt_values(gcn, wrong, {0, 1, 0, 1}); }) == ErrorCode::dimension);
}
