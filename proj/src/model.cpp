#include "fsl/model.hpp"

namespace fsl {

std::vector<ParamRef> model_params(Model& model) {
    std::vector<ParamRef> refs;
    for_each_param(model, [&](Matrix& m, bool backbone) { refs.push_back({&m, backbone}); });
    return refs;
}

size_t model_param_count(Model& model) {
    size_t count = 0;
    for_each_param(model, [&](Matrix& m, bool) { count += m.size(); });
    return count;
}

ModelBinding bind_model(Tape& tape, Model& model) {
    ModelBinding binding;
    binding.adaptor.params = &model.adaptor;
    for (size_t i = 0; i < model.backbone.weights.size(); ++i) {
        Var w = tape.leaf(model.backbone.weights[i]);
        Var b = tape.leaf(model.backbone.biases[i]);
        binding.backbone.weights.push_back(w);
        binding.backbone.biases.push_back(b);
        binding.leaves.push_back(w);
        binding.leaves.push_back(b);
    }
    for_each_adaptor_param(model.adaptor, [&](Matrix& m) {
        Var v = tape.leaf(m);
        binding.adaptor.vars.push_back(v);
        binding.leaves.push_back(v);
    });
    return binding;
}

} // namespace fsl
