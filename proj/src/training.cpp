#include "fsl/training.hpp"

#include <cmath>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/evaluation.hpp"

namespace fsl {

OptimizerState make_optimizer_state(const std::vector<ParamRef>& params) {
    OptimizerState state;
    for (const ParamRef& p : params) {
        state.m1.emplace_back(p.value->rows(), p.value->cols());
        state.m2.emplace_back(p.value->rows(), p.value->cols());
    }
    return state;
}

namespace {
void check_step_args(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
                     const std::vector<double>& lr_scales, const OptimizerState& state) {
    if (grads.size() != params.size() || lr_scales.size() != params.size() ||
        state.m1.size() != params.size())
        raise(ErrorCode::dimension, "optimizer step: params/grads/state size mismatch");
    for (size_t p = 0; p < params.size(); ++p)
        if (!params[p].value->same_shape(grads[p]))
            raise(ErrorCode::dimension, "optimizer step: grad shape mismatch at param " +
                                            std::to_string(p));
}
} // namespace

void sgd_step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
              const std::vector<double>& lr_scales, OptimizerState& state,
              const OptimizerConfig& cfg, double lr) {
    check_step_args(params, grads, lr_scales, state);
    ++state.step;
    for (size_t p = 0; p < params.size(); ++p) {
        double rate = lr * lr_scales[p];
        Matrix& value = *params[p].value;
        Matrix& vel = state.m1[p];
        for (size_t i = 0; i < value.size(); ++i) {
            // Classic L2: the decay joins the gradient before momentum.
            double g = grads[p].data()[i] + cfg.weight_decay * value.data()[i];
            double v = cfg.momentum * vel.data()[i] + g;
            vel.data()[i] = v;
            double step = cfg.nesterov ? g + cfg.momentum * v : v;
            value.data()[i] -= rate * step;
        }
    }
}

void adam_step(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
               const std::vector<double>& lr_scales, OptimizerState& state,
               const OptimizerConfig& cfg, double lr) {
    check_step_args(params, grads, lr_scales, state);
    ++state.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        double rate = lr * lr_scales[p];
        Matrix& value = *params[p].value;
        for (size_t i = 0; i < value.size(); ++i) {
            double g = grads[p].data()[i];
            double& m = state.m1[p].data()[i];
            double& v = state.m2[p].data()[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            value.data()[i] -= rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        }
    }
}

Var episode_loss(Tape& tape, Model& model, const ModelBinding& binding, const Episode& episode,
                 double lambda, Rng& rng, bool training) {
    if (lambda < 0.0) raise(ErrorCode::config, "episode_loss: lambda must be non-negative");
    Var support_x = tape.leaf(episode.support_x);
    Var query_x = tape.leaf(episode.query_x);
    Var phi_s = embed(tape, model.backbone, binding.backbone, support_x);
    Var phi_q = embed(tape, model.backbone, binding.backbone, query_x);

    std::vector<int> proto_labels(static_cast<size_t>(episode.n_way));
    for (int k = 0; k < episode.n_way; ++k) proto_labels[static_cast<size_t>(k)] = k;

    Var prototypes;
    if (model.pre_average) {
        // Adapt the class centers themselves.
        Var centers = compute_prototypes(tape, phi_s, episode.support_y, episode.n_way);
        prototypes = adapt_set(tape, binding.adaptor, centers, proto_labels, rng, training);
    } else {
        Var adapted = adapt_set(tape, binding.adaptor, phi_s, episode.support_y, rng, training);
        prototypes = compute_prototypes(tape, adapted, episode.support_y, episode.n_way);
    }
    Var probs = predict(tape, model.head, phi_q, prototypes);
    Var loss = cross_entropy(tape, probs, episode.query_y);

    if (lambda > 0.0) {
        Var union_emb = tape.stack_rows({phi_s, phi_q});
        std::vector<int> union_labels = episode.support_y;
        union_labels.insert(union_labels.end(), episode.query_y.begin(), episode.query_y.end());
        Var aux = contrastive_loss(tape, binding.adaptor, model.head, union_emb, union_labels,
                                   episode.n_way, episode.support_y.size(), rng, training);
        loss = tape.add(loss, tape.scale(aux, lambda));
    }
    return loss;
}

double episode_loss_value(Model& model, const Episode& episode, double lambda, Rng& rng,
                          bool training) {
    Tape tape;
    ModelBinding binding = bind_model(tape, model);
    return tape.value(episode_loss(tape, model, binding, episode, lambda, rng, training))(0, 0);
}

TrainResult train(const TrainSettings& settings, const VectorDataset& seen,
                  const VectorDataset& val, Model init, const EpochCallback& on_epoch) {
    if (settings.epochs < 0) raise(ErrorCode::config, "train: negative epoch count");
    if (settings.episodes_per_epoch < 1)
        raise(ErrorCode::config, "train: episodes_per_epoch must be positive");
    if (seen.dim() != init.backbone.input_dim())
        raise(ErrorCode::dimension, "train: dataset dim does not match backbone input");
    if (init.backbone.output_dim() != init.adaptor.dim)
        raise(ErrorCode::dimension, "train: backbone output does not match adaptor dim");

    TrainResult result;
    result.model = init;  // epoch-0 baseline

    Model current = init;
    std::vector<ParamRef> params = model_params(current);
    std::vector<double> lr_scales;
    for (const ParamRef& p : params)
        lr_scales.push_back(p.backbone ? settings.backbone_lr_scale : 1.0);
    OptimizerState state = make_optimizer_state(params);

    int val_ways = settings.val_n_way > 0 ? std::min(settings.val_n_way, val.num_classes)
                                          : val.num_classes;
    EvalOptions vopts;
    vopts.n_tasks = settings.val_tasks;
    vopts.seed = Rng::derive(settings.seed, 0xe7a1);
    auto validate = [&](const Model& m) {
        return evaluate(m, val, val_ways, 1, settings.val_queries, vopts).mean_accuracy;
    };

    result.best_val_accuracy = validate(current);
    result.best_epoch = 0;
    result.history.push_back({0, 0.0, result.best_val_accuracy, 0.0});
    if (on_epoch) on_epoch(result.history.back());

    for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
        double lr = settings.optimizer.learning_rate;
        if (settings.lr_decay_every > 0)
            lr *= std::pow(settings.lr_decay_factor, (epoch - 1) / settings.lr_decay_every);

        double loss_sum = 0.0;
        for (int k = 0; k < settings.episodes_per_epoch; ++k) {
            uint64_t stream = static_cast<uint64_t>(epoch) * 1000003ULL + static_cast<uint64_t>(k);
            Rng erng(Rng::derive(settings.seed, stream));
            Episode ep = sample_episode(seen, settings.n_way, settings.m_shot,
                                        settings.q_queries, erng);
            Tape tape;
            ModelBinding binding = bind_model(tape, current);
            Var loss = episode_loss(tape, current, binding, ep, settings.lambda, erng, true);
            double lv = tape.value(loss)(0, 0);
            if (!std::isfinite(lv))
                raise(ErrorCode::numeric, "train: loss diverged at epoch " +
                                              std::to_string(epoch) + ", episode " +
                                              std::to_string(k));
            tape.backward(loss);
            std::vector<Matrix> grads;
            grads.reserve(binding.leaves.size());
            for (Var v : binding.leaves) grads.push_back(tape.grad(v));
            if (settings.optimizer.kind == OptimizerKind::adam)
                adam_step(params, grads, lr_scales, state, settings.optimizer, lr);
            else
                sgd_step(params, grads, lr_scales, state, settings.optimizer, lr);
            loss_sum += lv;
        }

        double val_acc = validate(current);
        EpochRecord rec{epoch, loss_sum / settings.episodes_per_epoch, val_acc, lr};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (val_acc > result.best_val_accuracy) {
            result.best_val_accuracy = val_acc;
            result.best_epoch = epoch;
            result.model = current;
        }
    }
    return result;
}

} // namespace fsl
