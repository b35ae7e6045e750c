#include "cvnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace cvnn {

template <typename T>
Variable<T>::Variable(ComplexTensor<T> value, bool requires_grad, std::string name)
    : data_(std::make_shared<VarData<T>>())
{
    data_->value = std::move(value);
    data_->requires_grad = requires_grad;
    data_->name = std::move(name);
}

template <typename T>
Variable<T> Tape<T>::record(std::string op, ComplexTensor<T> value, std::vector<Variable<T>> inputs,
                            BackwardFn backward)
{
    Variable<T> out(std::move(value));
    const bool needs = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Variable<T>& v) {
                           return v.defined() && v.requires_grad();
                       });
    if (!needs)
        return out;
    out.data()->requires_grad = true;
    out.data()->is_intermediate = true;
    Node node;
    node.op = std::move(op);
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs)
        node.inputs.push_back(in.defined() ? in.data() : nullptr);
    node.output = out.data();
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return out;
}

template <typename T>
void Tape<T>::backward(const Variable<T>& loss)
{
    if (!loss.defined() || loss.value().size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad())
        return;
    // Intermediate gradients restart from zero on every traversal; only
    // leaves accumulate across calls.
    for (auto& node : nodes_)
        node.output->grad = ComplexTensor<T>();
    for (auto& node : nodes_)
        for (auto& in : node.inputs)
            if (in && in->is_intermediate)
                in->grad = ComplexTensor<T>();

    auto& seed = loss.data()->grad_buffer();
    seed.re()[0] += T(1);

    std::vector<ComplexTensor<T>*> grad_in;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& out = *it->output;
        if (out.grad.shape() != out.value.shape() || out.grad.size() != out.value.size())
            continue;  // not reachable from the loss
        grad_in.assign(it->inputs.size(), nullptr);
        for (std::size_t i = 0; i < it->inputs.size(); ++i)
            if (it->inputs[i] && it->inputs[i]->requires_grad)
                grad_in[i] = &it->inputs[i]->grad_buffer();
        it->backward(out.grad, grad_in);
    }
}

template <typename T>
void zero_grads(std::span<Variable<T>> params)
{
    for (auto& p : params)
        if (p.defined() && p.has_grad())
            p.mutable_grad().fill(T(0), T(0));
}

template class Variable<float>;
template class Variable<double>;
template class Tape<float>;
template class Tape<double>;
template void zero_grads<float>(std::span<Variable<float>>);
template void zero_grads<double>(std::span<Variable<double>>);

namespace {

struct Eval {
    double loss;
    std::uint64_t decisions;
};

Eval evaluate(const LossBuilder& f)
{
    Tape<double> tape(false);
    tape.set_track_decisions(true);
    auto loss = f(tape);
    if (loss.value().size() != 1)
        throw ShapeError("grad_check: loss must be scalar, got " + to_string(loss.shape()));
    return {loss.value().re()[0], tape.decision_hash()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& f, std::vector<Variable<double>> params, const GradCheckOptions& options)
{
    const Eval base = evaluate(f);
    const Eval again = evaluate(f);
    if (base.loss != again.loss || base.decisions != again.decisions)
        throw NondeterministicError("grad_check: two forward passes disagree (" + std::to_string(base.loss) + " vs " +
                                    std::to_string(again.loss) + ")");

    zero_grads(params);
    {
        Tape<double> tape;
        auto loss = f(tape);
        tape.backward(loss);
    }
    if (options.after_backward)
        options.after_backward(params);

    GradCheckReport report;
    const double h = options.step;
    for (auto& p : params) {
        GradCheckReport::PerParam per;
        per.name = p.name();
        const ComplexTensor<double> analytic = p.grad();
        const std::size_t n = p.value().size();
        const std::size_t limit = options.max_coords_per_param ? std::min(n, options.max_coords_per_param) : n;
        // Evenly spread sample when capped.
        const std::size_t stride = limit ? std::max<std::size_t>(1, n / limit) : 1;
        for (int plane = 0; plane < 2; ++plane) {
            const bool imag = plane == 1;
            if ((imag && p.frozen_im()) || (!imag && p.frozen_re()))
                continue;
            for (std::size_t c = 0, i = 0; c < limit && i < n; ++c, i += stride) {
                auto values = imag ? p.mutable_value().im() : p.mutable_value().re();
                const double saved = values[i];
                values[i] = saved + h;
                const Eval plus = evaluate(f);
                values[i] = saved - h;
                const Eval minus = evaluate(f);
                values[i] = saved;
                if (plus.decisions != base.decisions || minus.decisions != base.decisions) {
                    ++per.straddled;
                    continue;
                }
                const double numeric = (plus.loss - minus.loss) / (2 * h);
                const double ga = imag ? analytic.im()[i] : analytic.re()[i];
                const double rel =
                    std::abs(ga - numeric) / std::max({std::abs(ga), std::abs(numeric), 1e-8});
                ++per.checked;
                per.max_rel_error = std::max(per.max_rel_error, rel);
                if (!(rel < options.tolerance))
                    report.failures.push_back({per.name, i, imag, ga, numeric, rel});
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, per.max_rel_error);
        report.checked += per.checked;
        report.straddled += per.straddled;
        report.params.push_back(per);
    }
    report.passed = report.failures.empty() && report.checked > 0;
    return report;
}

}  // namespace cvnn
