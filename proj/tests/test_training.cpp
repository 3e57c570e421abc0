#include <cmath>
#include <vector>

#include "doctest.h"

#include "fsl/training.hpp"
#include "helpers.hpp"

using namespace fsl;
using fsl_test::error_code_of;

namespace {

Model small_model(size_t in_dim, size_t embed, uint64_t seed) {
    Rng rng(seed);
    Model m;
    m.backbone = make_backbone({in_dim, embed}, rng);
    m.adaptor = make_transformer_adaptor(embed, 1, 1, 0, 0.5, rng);
    m.head = SimilarityHead{Similarity::neg_sq_euclidean, 1.0 / 64.0};
    return m;
}

} // namespace

TEST_CASE("sgd follows the scalar recurrence") {
    // Single 1x1 parameter; run three steps against a hand loop.
    Matrix value(1, 1, {2.0});
    std::vector<ParamRef> params{{&value, false}};
    OptimizerState state = make_optimizer_state(params);
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.01;
    cfg.nesterov = false;

    double x = 2.0, v = 0.0;
    std::vector<double> grads{0.5, -0.3, 0.2};
    for (double g : grads) {
        sgd_step(params, {Matrix(1, 1, {g})}, {1.0}, state, cfg, 0.1);
        double adjusted = g + cfg.weight_decay * x;
        v = cfg.momentum * v + adjusted;
        x -= 0.1 * v;
        CHECK(value(0, 0) == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("nesterov sgd looks ahead through the velocity") {
    Matrix value(1, 1, {1.0});
    std::vector<ParamRef> params{{&value, false}};
    OptimizerState state = make_optimizer_state(params);
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd;
    cfg.momentum = 0.8;
    cfg.weight_decay = 0.0;
    cfg.nesterov = true;

    double x = 1.0, v = 0.0;
    for (double g : {0.4, 0.1, -0.2}) {
        sgd_step(params, {Matrix(1, 1, {g})}, {1.0}, state, cfg, 0.05);
        v = cfg.momentum * v + g;
        x -= 0.05 * (g + cfg.momentum * v);
        CHECK(value(0, 0) == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("adam follows the scalar recurrence") {
    Matrix value(1, 2, {1.0, -2.0});
    std::vector<ParamRef> params{{&value, false}};
    OptimizerState state = make_optimizer_state(params);
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::adam;

    double x0 = 1.0, x1 = -2.0;
    double m0 = 0.0, m1 = 0.0, v0 = 0.0, v1 = 0.0;
    std::vector<std::pair<double, double>> grads{{0.3, -0.7}, {-0.1, 0.4}, {0.6, 0.2}};
    for (size_t step = 0; step < grads.size(); ++step) {
        double g0 = grads[step].first, g1 = grads[step].second;
        adam_step(params, {Matrix(1, 2, {g0, g1})}, {1.0}, state, cfg, 0.01);
        double t = static_cast<double>(step + 1);
        m0 = cfg.beta1 * m0 + (1 - cfg.beta1) * g0;
        m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g1;
        v0 = cfg.beta2 * v0 + (1 - cfg.beta2) * g0 * g0;
        v1 = cfg.beta2 * v1 + (1 - cfg.beta2) * g1 * g1;
        double mh0 = m0 / (1 - std::pow(cfg.beta1, t));
        double mh1 = m1 / (1 - std::pow(cfg.beta1, t));
        double vh0 = v0 / (1 - std::pow(cfg.beta2, t));
        double vh1 = v1 / (1 - std::pow(cfg.beta2, t));
        x0 -= 0.01 * mh0 / (std::sqrt(vh0) + cfg.eps);
        x1 -= 0.01 * mh1 / (std::sqrt(vh1) + cfg.eps);
        CHECK(value(0, 0) == doctest::Approx(x0).epsilon(1e-12));
        CHECK(value(0, 1) == doctest::Approx(x1).epsilon(1e-12));
    }
}

TEST_CASE("per-parameter rate scales shrink the update") {
    Matrix a(1, 1, {1.0});
    Matrix b(1, 1, {1.0});
    std::vector<ParamRef> params{{&a, true}, {&b, false}};
    OptimizerState state = make_optimizer_state(params);
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.nesterov = false;
    sgd_step(params, {Matrix(1, 1, {1.0}), Matrix(1, 1, {1.0})}, {0.1, 1.0}, state, cfg, 0.5);
    CHECK(a(0, 0) == doctest::Approx(1.0 - 0.05).epsilon(1e-12));
    CHECK(b(0, 0) == doctest::Approx(1.0 - 0.5).epsilon(1e-12));

    CHECK(error_code_of([&] {
        sgd_step(params, {Matrix(1, 1)}, {1.0, 1.0}, state, cfg, 0.1);
    }) == ErrorCode::dimension);
    CHECK(error_code_of([&] {
        sgd_step(params, {Matrix(1, 1), Matrix(2, 2)}, {1.0, 1.0}, state, cfg, 0.1);
    }) == ErrorCode::dimension);
}

TEST_CASE("episode loss without the set term is plain prototype cross entropy") {
    Rng data_rng(201);
    VectorDataset data = gen_synthetic(5, 10, 4, 0.4, 1.2, data_rng);
    Rng ep_rng(202);
    Episode ep = sample_episode(data, 3, 2, 4, ep_rng);

    Model m;
    Rng init(203);
    m.backbone = make_backbone({4, 6}, init);
    m.adaptor = make_identity_adaptor(6);
    m.head = SimilarityHead{Similarity::neg_sq_euclidean, 1.0 / 64.0};

    Rng loss_rng(204);
    double got = episode_loss_value(m, ep, 0.0, loss_rng, false);

    Matrix support = embed_values(m.backbone, ep.support_x);
    Matrix queries = embed_values(m.backbone, ep.query_x);
    Matrix protos = compute_prototypes_values(support, ep.support_y, ep.n_way);
    Matrix probs = predict_values(m.head, queries, protos);
    double want = 0.0;
    for (size_t i = 0; i < queries.rows(); ++i)
        want -= std::log(probs(i, static_cast<size_t>(ep.query_y[i])));
    want /= static_cast<double>(queries.rows());
    CHECK(got == doctest::Approx(want).epsilon(1e-10));

    // The set term raises the loss when the adapted union differs, and a
    // negative weight is rejected.
    Rng loss_rng2(204);
    Model m2 = small_model(4, 6, 205);
    CHECK(error_code_of([&] { episode_loss_value(m2, ep, -0.1, loss_rng2, false); }) ==
          ErrorCode::config);
}

TEST_CASE("lambda adds exactly the weighted set loss") {
    Rng data_rng(206);
    VectorDataset data = gen_synthetic(4, 8, 3, 0.4, 1.0, data_rng);
    Rng ep_rng(207);
    Episode ep = sample_episode(data, 3, 2, 2, ep_rng);
    Model m = small_model(3, 5, 208);

    // Dropout draws are rng-dependent, so evaluate with training=false.
    Rng r1(1), r2(1), r3(1);
    double base = episode_loss_value(m, ep, 0.0, r1, false);
    double with_half = episode_loss_value(m, ep, 0.5, r2, false);
    double with_one = episode_loss_value(m, ep, 1.0, r3, false);
    double set_term = with_one - base;
    CHECK(with_half == doctest::Approx(base + 0.5 * set_term).epsilon(1e-9));
    CHECK(set_term > 0.0);
}

TEST_CASE("training improves validation accuracy on easy data") {
    Rng data_rng(209);
    VectorDataset all = gen_synthetic(10, 14, 6, 0.9, 1.2, data_rng);
    Rng split_rng(210);
    Splits s = make_splits(all, 0.5, 0.25, split_rng);

    Model init = small_model(6, 6, 211);
    TrainSettings settings;
    settings.n_way = 3;
    settings.m_shot = 1;
    settings.q_queries = 5;
    settings.lambda = 0.1;
    settings.epochs = 3;
    settings.episodes_per_epoch = 30;
    settings.val_tasks = 60;
    settings.val_queries = 5;
    settings.seed = 212;

    TrainResult res = train(settings, s.seen, s.val, init);
    REQUIRE(res.history.size() == 4);
    CHECK(res.history.front().epoch == 0);
    CHECK(res.best_val_accuracy >= res.history.front().val_accuracy);
    for (const auto& rec : res.history) CHECK(res.best_val_accuracy >= rec.val_accuracy);
    CHECK(res.history[static_cast<size_t>(res.best_epoch)].val_accuracy ==
          res.best_val_accuracy);

    // Deterministic: the same settings reproduce the history exactly.
    TrainResult res2 = train(settings, s.seen, s.val, init);
    REQUIRE(res2.history.size() == res.history.size());
    for (size_t i = 0; i < res.history.size(); ++i) {
        CHECK(res2.history[i].mean_loss == res.history[i].mean_loss);
        CHECK(res2.history[i].val_accuracy == res.history[i].val_accuracy);
    }

    // The callback sees every epoch record in order.
    std::vector<int> seen_epochs;
    train(settings, s.seen, s.val, init,
          [&](const EpochRecord& rec) { seen_epochs.push_back(rec.epoch); });
    CHECK(seen_epochs == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("learning rate steps down on the configured schedule") {
    Rng data_rng(213);
    VectorDataset all = gen_synthetic(8, 8, 4, 0.5, 1.0, data_rng);
    Rng split_rng(214);
    Splits s = make_splits(all, 0.5, 0.25, split_rng);
    Model init = small_model(4, 4, 215);

    TrainSettings settings;
    settings.n_way = 2;
    settings.m_shot = 1;
    settings.q_queries = 2;
    settings.epochs = 5;
    settings.episodes_per_epoch = 2;
    settings.val_tasks = 5;
    settings.val_queries = 2;
    settings.lr_decay_every = 2;
    settings.lr_decay_factor = 0.5;
    settings.optimizer.learning_rate = 0.01;
    settings.seed = 216;

    TrainResult res = train(settings, s.seen, s.val, init);
    REQUIRE(res.history.size() == 6);
    double base = 0.01;
    for (const auto& rec : res.history) {
        if (rec.epoch == 0) continue;
        double want = base * std::pow(0.5, (rec.epoch - 1) / 2);
        CHECK(rec.learning_rate == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("training input validation") {
    Rng data_rng(217);
    VectorDataset d = gen_synthetic(4, 6, 3, 0.4, 1.0, data_rng);
    Model m = small_model(3, 4, 218);
    TrainSettings settings;
    settings.epochs = 1;
    settings.episodes_per_epoch = 1;
    settings.n_way = 2;
    settings.m_shot = 1;
    settings.q_queries = 1;
    settings.val_tasks = 1;

    TrainSettings bad = settings;
    bad.epochs = -1;
    CHECK(error_code_of([&] { train(bad, d, d, m); }) == ErrorCode::config);
    bad = settings;
    bad.episodes_per_epoch = 0;
    CHECK(error_code_of([&] { train(bad, d, d, m); }) == ErrorCode::config);

    Model wrong_in = small_model(5, 4, 219);
    CHECK(error_code_of([&] { train(settings, d, d, wrong_in); }) == ErrorCode::dimension);

    Model mismatched = small_model(3, 4, 220);
    mismatched.adaptor = make_identity_adaptor(7);
    CHECK(error_code_of([&] { train(settings, d, d, mismatched); }) == ErrorCode::dimension);
}

TEST_CASE("model parameter enumeration is stable and complete") {
    Model m = small_model(3, 4, 221);
    std::vector<ParamRef> params = model_params(m);
    // Backbone weight + bias, then 4 d_head projections with biases, fc and
    // layer norm: 2 + 6 + 2 + 2.
    REQUIRE(params.size() == 12);
    CHECK(params[0].backbone);
    CHECK(params[1].backbone);
    for (size_t i = 2; i < params.size(); ++i) CHECK(!params[i].backbone);
    size_t total = 0;
    for (const auto& p : params) total += p.value->size();
    CHECK(model_param_count(m) == total);
}
