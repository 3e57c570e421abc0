#pragma once

#include <cstdint>
#include <vector>

#include "fsl/adaptors.hpp"
#include "fsl/backbone.hpp"
#include "fsl/classify.hpp"

namespace fsl {

// Everything needed to score an episode: embedding network, set adaptor
// and similarity head. pre_average adapts class prototypes; when false the
// adaptor runs over support instances and prototypes are taken afterwards.
struct Model {
    BackboneParams backbone;
    AdaptorParams adaptor;
    SimilarityHead head;
    bool pre_average = true;
};

// Stable parameter enumeration: backbone first, then adaptor. The same
// order backs optimizer state, checkpoints and gradient collection.
template <typename F>
void for_each_param(Model& model, F&& f) {
    for (size_t i = 0; i < model.backbone.weights.size(); ++i) {
        f(model.backbone.weights[i], true);
        f(model.backbone.biases[i], true);
    }
    for_each_adaptor_param(model.adaptor, [&](Matrix& m) { f(m, false); });
}

struct ParamRef {
    Matrix* value = nullptr;
    bool backbone = false;
};
std::vector<ParamRef> model_params(Model& model);
size_t model_param_count(Model& model);

// Binds every parameter as a tape leaf, in model_params order.
struct ModelBinding {
    BackboneBinding backbone;
    AdaptorBinding adaptor;
    std::vector<Var> leaves;  // aligned with model_params
};
ModelBinding bind_model(Tape& tape, Model& model);

} // namespace fsl
