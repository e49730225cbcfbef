#ifndef XMM_OPTIM_HPP
#define XMM_OPTIM_HPP

#include <map>
#include <string>
#include <vector>

#include "xmm/store.hpp"

namespace xmm {

// Adam with bias correction. Moment buffers exist only for parameters that
// are trainable at step time; frozen parameters are never touched.
struct OptimizerState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step_count = 0;

    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::map<std::string, Moments> moments;
};

// One optimizer step over every trainable parameter in the store. Missing
// gradients count as zero. All gradients are cleared afterwards, so a step
// is: forward(s) -> backward(s) -> adam_step.
void adam_step(ParameterStore& store, OptimizerState& state);

}  // namespace xmm

#endif
