#pragma once

#include <vector>

#include "tlab/tensor.hpp"

namespace tlab::trainbench {

/// Adaptive-moment optimizer. decoupled = false applies weight decay through
/// the gradient (the CNN setting); true applies it directly to the weights
/// (the decoupled variant used for ViTs).
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0,
         bool decoupled = false);

    void step(const std::vector<ParamRef>& params, double lr);

private:
    double beta1_, beta2_, eps_, weight_decay_;
    bool decoupled_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

} // namespace tlab::trainbench
