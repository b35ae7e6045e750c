#pragma once

// Complex-valued network layers. Each layer exists twice: as a pure
// tensor-level forward function, and as a differentiable op that records a
// backward rule on a Tape.

#include "cvnn/autodiff.hpp"
#include "cvnn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cvnn {

enum class ActivationKind { CReLU, CTanh, CELU, CPReLU };
enum class PoolVariant { RealSplit, Amplitude, Area };
/// Real readout of the final complex logits.
enum class Readout { Modulus, RealPart, SquaredModulus };

const char* to_string(ActivationKind kind);
const char* to_string(PoolVariant variant);
const char* to_string(Readout readout);
ActivationKind parse_activation(const std::string& name);
PoolVariant parse_pool_variant(const std::string& name);
Readout parse_readout(const std::string& name);

constexpr double kEluAlpha = 1.0;
constexpr double kPreluInitialSlope = 0.25;

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct PoolOptions {
    PoolVariant variant = PoolVariant::Area;
    std::size_t window = 2;
    std::size_t stride = 2;
};

/// Per-channel batch-normalization statistics. Covariance is stored without
/// epsilon as (V_rr, V_ri, V_ii) rows of a [C,3] tensor.
template <typename T>
struct BatchNormState {
    ComplexTensor<T> running_mean;
    RealTensor<T> running_cov;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels);
    std::size_t channels() const { return running_mean.size(); }
};

/// V_eps^{-1/2} for V_eps = [[rr, ri], [ri, ii]] + eps·I, closed form.
template <typename T>
struct Whitening {
    T w11, w12, w22;
};

template <typename T>
Whitening<T> inverse_sqrt_2x2(T vrr, T vri, T vii, T eps);

// ---------------------------------------------------------------------------
// Tensor-level forward functions.

/// out.re = A*x - B*y + bias.re, out.im = A*y + B*x + bias.im with
/// kernel = A + jB of shape [Cout, Cin, kh, kw]; cross-correlation.
template <typename T>
ComplexTensor<T> complex_conv2d(const ComplexTensor<T>& input, const ComplexTensor<T>& kernel,
                                const ComplexTensor<T>* bias, const Conv2dOptions& options);

/// gamma_diag.re = γ_rr, gamma_diag.im = γ_ii, gamma_off.re = γ_ri; null
/// pointers mean Γ = I and β = 0.
template <typename T>
ComplexTensor<T> complex_batchnorm(const ComplexTensor<T>& input, BatchNormState<T>& state, bool training,
                                   const ComplexTensor<T>* gamma_diag = nullptr,
                                   const ComplexTensor<T>* gamma_off = nullptr, const ComplexTensor<T>* beta = nullptr);

/// Split activation; `prelu_slope` (re plane, one slope per channel on axis 1)
/// is only read for CPReLU.
template <typename T>
ComplexTensor<T> activation(const ComplexTensor<T>& input, ActivationKind kind,
                            const ComplexTensor<T>* prelu_slope = nullptr);

template <typename T>
struct PoolResult {
    ComplexTensor<T> output;
    // Flat input offsets of the selected elements. For Amplitude and Area
    // both maps are the same.
    std::vector<std::size_t> index_re;
    std::vector<std::size_t> index_im;
};

template <typename T>
PoolResult<T> complex_maxpool(const ComplexTensor<T>& input, const PoolOptions& options);

/// out = x·Wᵀ + b with complex W [out, F].
template <typename T>
ComplexTensor<T> complex_linear(const ComplexTensor<T>& input, const ComplexTensor<T>& weight,
                                const ComplexTensor<T>* bias);

template <typename T>
RealTensor<T> amplitude_layer(const ComplexTensor<T>& input);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
T softmax_cross_entropy(const RealTensor<T>& logits, std::span<const int> labels);

template <typename T>
RealTensor<T> softmax(const RealTensor<T>& logits);

// ---------------------------------------------------------------------------
// Differentiable ops.

namespace op {

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);
template <typename T>
Variable<T> mul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b);
/// Σ re(x), returned as a [1] tensor.
template <typename T>
Variable<T> sum_real(Tape<T>& tape, const Variable<T>& x);
/// Σ |x|².
template <typename T>
Variable<T> sum_abs2(Tape<T>& tape, const Variable<T>& x);
/// Σ (w.re·x.re + w.im·x.im) for a constant probe w.
template <typename T>
Variable<T> inner(Tape<T>& tape, const Variable<T>& x, const ComplexTensor<T>& w);
template <typename T>
Variable<T> reshape(Tape<T>& tape, const Variable<T>& x, Shape shape);

template <typename T>
Variable<T> conv2d(Tape<T>& tape, const Variable<T>& input, const Variable<T>& kernel, const Variable<T>& bias,
                   const Conv2dOptions& options);

/// Undefined gamma/beta variables mean Γ = I and β = 0.
template <typename T>
Variable<T> batch_norm(Tape<T>& tape, const Variable<T>& input, BatchNormState<T>& state, bool training,
                       const Variable<T>& gamma_diag, const Variable<T>& gamma_off, const Variable<T>& beta);

template <typename T>
Variable<T> activate(Tape<T>& tape, const Variable<T>& input, ActivationKind kind, const Variable<T>& prelu_slope);

template <typename T>
Variable<T> max_pool(Tape<T>& tape, const Variable<T>& input, const PoolOptions& options);

template <typename T>
Variable<T> linear(Tape<T>& tape, const Variable<T>& input, const Variable<T>& weight, const Variable<T>& bias);

/// Real readout of complex logits; the result's imaginary plane is zero.
template <typename T>
Variable<T> readout(Tape<T>& tape, const Variable<T>& input, Readout kind = Readout::Modulus);

/// Scalar [1] loss from the real plane of `logits` [N,K].
template <typename T>
Variable<T> cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::vector<int> labels);

}  // namespace op
}  // namespace cvnn
