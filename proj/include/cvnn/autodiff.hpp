#pragma once

// Define-by-run reverse-mode differentiation. A complex tensor is treated as
// its pair of real planes: grad.re holds dL/d(value.re) and grad.im holds
// dL/d(value.im). The loss is real, so no Wirtinger calculus is involved.

#include "cvnn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvnn {

template <typename T>
struct VarData {
    ComplexTensor<T> value;
    ComplexTensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    // Frozen planes are held fixed by optimizers and skipped by grad_check.
    bool frozen_re = false;
    bool frozen_im = false;
    bool is_intermediate = false;
    std::string name;

    ComplexTensor<T>& grad_buffer()
    {
        if (grad.shape() != value.shape() || grad.size() != value.size())
            grad = ComplexTensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Variable {
public:
    using value_type = T;

    Variable() = default;
    explicit Variable(ComplexTensor<T> value, bool requires_grad = false, std::string name = {});

    bool defined() const { return static_cast<bool>(data_); }
    const ComplexTensor<T>& value() const { return data_->value; }
    ComplexTensor<T>& mutable_value() { return data_->value; }
    const Shape& shape() const { return data_->value.shape(); }

    bool requires_grad() const { return data_->requires_grad; }
    bool has_grad() const
    {
        return data_->grad.shape() == data_->value.shape() && data_->grad.size() == data_->value.size();
    }
    /// Gradient, materialized as zeros if nothing has been accumulated yet.
    const ComplexTensor<T>& grad() const { return data_->grad_buffer(); }
    ComplexTensor<T>& mutable_grad() { return data_->grad_buffer(); }

    const std::string& name() const { return data_->name; }
    bool frozen_re() const { return data_->frozen_re; }
    bool frozen_im() const { return data_->frozen_im; }
    void set_frozen(bool re, bool im)
    {
        data_->frozen_re = re;
        data_->frozen_im = im;
    }

    const std::shared_ptr<VarData<T>>& data() const { return data_; }

private:
    std::shared_ptr<VarData<T>> data_;
};

template <typename T>
class Tape {
public:
    /// grad_in[i] is null when input i does not require a gradient.
    using BackwardFn = std::function<void(const ComplexTensor<T>& grad_out, std::span<ComplexTensor<T>* const> grad_in)>;

    struct Node {
        std::string op;
        std::vector<std::shared_ptr<VarData<T>>> inputs;
        std::shared_ptr<VarData<T>> output;
        BackwardFn backward;
    };

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    /// Wraps `value` as the output of `op`. A node is appended only when the
    /// tape is recording and some input requires a gradient.
    Variable<T> record(std::string op, ComplexTensor<T> value, std::vector<Variable<T>> inputs, BackwardFn backward);

    /// Accumulates d(loss)/d(v) into every reachable v with requires_grad.
    void backward(const Variable<T>& loss);

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }

    // Discrete branch decisions (activation kinks, pooling argmax) folded
    // into a running hash. Finite-difference checks use it to detect a
    // perturbation that crossed a non-differentiable point.
    void set_track_decisions(bool on) { track_decisions_ = on; }
    bool track_decisions() const { return track_decisions_; }
    void note_decision(std::uint64_t word)
    {
        decision_hash_ ^= word + 0x9e3779b97f4a7c15ULL + (decision_hash_ << 6) + (decision_hash_ >> 2);
    }
    std::uint64_t decision_hash() const { return decision_hash_; }

private:
    bool recording_;
    bool track_decisions_ = false;
    std::uint64_t decision_hash_ = 0;
    std::vector<Node> nodes_;
};

template <typename T>
void zero_grads(std::span<Variable<T>> params);

template <typename T>
void zero_grads(std::vector<Variable<T>>& params)
{
    zero_grads(std::span<Variable<T>>(params));
}

struct GradCheckCoordinate {
    std::string param;
    std::size_t index = 0;
    bool imag = false;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    struct PerParam {
        std::string name;
        double max_rel_error = 0;
        std::size_t checked = 0;
        std::size_t straddled = 0;  // coordinates whose ±step crossed a kink or tie
    };
    std::vector<PerParam> params;
    std::vector<GradCheckCoordinate> failures;
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t straddled = 0;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Upper bound on coordinates examined per parameter (0 = all).
    std::size_t max_coords_per_param = 0;
    /// Runs after the analytic backward pass; negative-control tests use it
    /// to corrupt gradients.
    std::function<void(std::vector<Variable<double>>&)> after_backward;
};

class NondeterministicError : public Error {
public:
    using Error::Error;
};

/// Builds the loss on the supplied tape from the current parameter values.
using LossBuilder = std::function<Variable<double>(Tape<double>&)>;

/// Compares analytic gradients with central finite differences,
/// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8), over every unfrozen real
/// coordinate of `params`.
GradCheckReport grad_check(const LossBuilder& f, std::vector<Variable<double>> params, const GradCheckOptions& options);

}  // namespace cvnn
