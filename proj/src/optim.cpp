#include "xmm/optim.hpp"

#include <cmath>

#include "xmm/errors.hpp"

namespace xmm {

void adam_step(ParameterStore& store, OptimizerState& state) {
    // Drop moments for parameters that are no longer trainable (freeze plans
    // flip flags between phases).
    for (auto it = state.moments.begin(); it != state.moments.end();) {
        if (!store.contains(it->first) || !store.at(it->first).trainable)
            it = state.moments.erase(it);
        else
            ++it;
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    for (auto& [name, entry] : store) {
        if (!entry.trainable) continue;
        auto& tensor = entry.tensor;
        auto& node = tensor.node();
        auto& mom = state.moments[name];
        if (mom.m.size() != node.values.size()) {
            mom.m.assign(node.values.size(), 0.0);
            mom.v.assign(node.values.size(), 0.0);
        }
        const bool has_grad = !node.grad.empty();
        for (std::size_t i = 0; i < node.values.size(); ++i) {
            const double g = has_grad ? node.grad[i] : 0.0;
            if (!std::isfinite(g)) throw ContractError("adam_step: non-finite gradient in " + name);
            mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
            mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            node.values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }

    for (auto& [name, entry] : store) entry.tensor.node().grad.clear();
}

}  // namespace xmm
