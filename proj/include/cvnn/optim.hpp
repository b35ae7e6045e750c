#pragma once

#include "cvnn/autodiff.hpp"

#include <cstddef>
#include <vector>

namespace cvnn {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments, one complex tensor per parameter. The real and
/// imaginary planes are independent coordinates.
template <typename T>
struct AdamState {
    std::size_t step = 0;
    std::vector<ComplexTensor<T>> m;
    std::vector<ComplexTensor<T>> v;

    /// Zero moments shaped like `params`.
    static AdamState zeros_for(const std::vector<Variable<T>>& params);
};

/// One Adam update of every unfrozen plane from the parameters' current
/// gradients. Throws ShapeError if the state does not match the parameters.
template <typename T>
void adam_step(std::vector<Variable<T>>& params, AdamState<T>& state, const AdamConfig& config);

}  // namespace cvnn
