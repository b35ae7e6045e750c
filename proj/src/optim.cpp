#include "cvnn/optim.hpp"

#include "cvnn/kernels.hpp"

#include <cmath>

namespace cvnn {

template <typename T>
AdamState<T> AdamState<T>::zeros_for(const std::vector<Variable<T>>& params)
{
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.shape());
        s.v.emplace_back(p.shape());
    }
    return s;
}

template <typename T>
void adam_step(std::vector<Variable<T>>& params, AdamState<T>& state, const AdamConfig& config)
{
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
                         std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].shape() != params[i].shape() || state.v[i].shape() != params[i].shape())
            throw ShapeError("adam_step: moment shape " + to_string(state.m[i].shape()) + " does not match " +
                             params[i].name() + " " + to_string(params[i].shape()));

    ++state.step;
    const double t = double(state.step);
    const T step_size = T(config.learning_rate / (1 - std::pow(config.beta1, t)));
    const T bias2_sqrt = T(std::sqrt(1 - std::pow(config.beta2, t)));
    const auto& k = kernels::active<T>();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad())
            continue;
        const auto& g = p.grad();
        const std::size_t n = g.size();
        if (!p.frozen_re())
            k.adam(n, p.mutable_value().re().data(), g.re().data(), state.m[i].re().data(), state.v[i].re().data(),
                   T(config.beta1), T(config.beta2), step_size, bias2_sqrt, T(config.eps));
        if (!p.frozen_im())
            k.adam(n, p.mutable_value().im().data(), g.im().data(), state.m[i].im().data(), state.v[i].im().data(),
                   T(config.beta1), T(config.beta2), step_size, bias2_sqrt, T(config.eps));
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<Variable<float>>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::vector<Variable<double>>&, AdamState<double>&, const AdamConfig&);

}  // namespace cvnn
