#include "cvnn/gradcheck.hpp"

#include "cvnn/layers.hpp"
#include "cvnn/model.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace cvnn {

GradcheckScope parse_gradcheck_scope(const std::string& name)
{
    if (name == "layers")
        return GradcheckScope::Layers;
    if (name == "model")
        return GradcheckScope::Model;
    if (name == "all")
        return GradcheckScope::All;
    throw Error("unknown gradcheck scope '" + name + "' (expected layers, model or all)");
}

bool passed(const OpCheck& c)
{
    return c.report.passed && (c.precision_rel < 0 || c.precision_rel < kPrecisionTolerance);
}

namespace {

constexpr const char* kModelCase = "cvnet5_micro";

struct ParamInit {
    std::string name;
    ComplexTensor<double> value;
    bool frozen_re = false;
    bool frozen_im = false;
};

template <typename T>
using Builder = std::function<Variable<T>(Tape<T>&, std::vector<Variable<T>>&)>;

struct Case {
    std::string name;
    std::vector<ParamInit> params;
    Builder<double> f64;
    Builder<float> f32;
};

template <typename F>
Case make_case(std::string name, std::vector<ParamInit> params, F f)
{
    return {std::move(name), std::move(params), Builder<double>(f), Builder<float>(f)};
}

/// Uniform in ±[min_abs, 1] so activation inputs stay clear of the kink.
ComplexTensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double min_abs = 0)
{
    std::uniform_real_distribution<double> mag(min_abs, 1.0);
    std::bernoulli_distribution sign(0.5);
    ComplexTensor<double> t(std::move(shape));
    for (auto plane : {t.re(), t.im()})
        for (auto& v : plane)
            v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

template <typename T>
ComplexTensor<T> cast_tensor(const ComplexTensor<double>& t)
{
    return cast<T>(t);
}

/// Fixed random projection so that every output coordinate reaches the loss.
template <typename T>
Variable<T> project(Tape<T>& tape, const Variable<T>& out)
{
    std::mt19937_64 rng(0x5eed);
    return op::inner(tape, out, cast_tensor<T>(random_tensor(out.shape(), rng)));
}

template <typename T>
BatchNormState<T> eval_state(std::size_t channels)
{
    BatchNormState<T> s(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        s.running_mean.re()[c] = T(0.1 * double(c) - 0.05);
        s.running_mean.im()[c] = T(0.2 - 0.07 * double(c));
        s.running_cov[3 * c + 0] = T(1.3 + 0.1 * double(c));
        s.running_cov[3 * c + 1] = T(0.4 - 0.2 * double(c));
        s.running_cov[3 * c + 2] = T(0.8 + 0.05 * double(c));
    }
    return s;
}

std::vector<Case> layer_cases(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<Case> cases;

    cases.push_back(make_case("complex_add",
                              {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({2, 3}, rng)}},
                              [](auto& tape, auto& p) { return project(tape, op::add(tape, p[0], p[1])); }));
    cases.push_back(make_case("complex_mul",
                              {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({2, 3}, rng)}},
                              [](auto& tape, auto& p) { return project(tape, op::mul(tape, p[0], p[1])); }));
    cases.push_back(make_case("reshape", {{"x", random_tensor({2, 3, 2}, rng)}}, [](auto& tape, auto& p) {
        return project(tape, op::reshape(tape, p[0], Shape{3, 4}));
    }));

    cases.push_back(make_case("complex_conv2d",
                              {{"x", random_tensor({2, 2, 5, 5}, rng)},
                               {"kernel", random_tensor({3, 2, 3, 3}, rng)},
                               {"bias", random_tensor({3}, rng)}},
                              [](auto& tape, auto& p) {
                                  return project(tape, op::conv2d(tape, p[0], p[1], p[2], Conv2dOptions{1, 1}));
                              }));
    cases.push_back(make_case("complex_conv2d[stride2]",
                              {{"x", random_tensor({1, 2, 6, 6}, rng)},
                               {"kernel", random_tensor({2, 2, 2, 2}, rng)},
                               {"bias", random_tensor({2}, rng)}},
                              [](auto& tape, auto& p) {
                                  return project(tape, op::conv2d(tape, p[0], p[1], p[2], Conv2dOptions{2, 0}));
                              }));

    for (bool training : {true, false}) {
        auto x = random_tensor({4, 3, 3, 3}, rng);
        // Correlated, off-centre parts so that whitening has work to do.
        for (std::size_t i = 0; i < x.size(); ++i)
            x.im()[i] = 0.6 * x.re()[i] + 0.5 * x.im()[i] + 0.3;
        auto gd = random_tensor({3}, rng, 0.5);
        std::vector<ParamInit> params{{"x", x},
                                      {"gamma", gd},
                                      {"gamma_ri", random_tensor({3}, rng), false, true},
                                      {"beta", random_tensor({3}, rng)}};
        cases.push_back(make_case(training ? "complex_batchnorm[train]" : "complex_batchnorm[eval]", params,
                                  [training](auto& tape, auto& p) {
                                      using T = typename std::remove_reference_t<decltype(p[0])>::value_type;
                                      auto state = eval_state<T>(3);
                                      return project(tape, op::batch_norm(tape, p[0], state, training, p[1], p[2], p[3]));
                                  }));
    }

    for (auto kind : {ActivationKind::CReLU, ActivationKind::CTanh, ActivationKind::CELU, ActivationKind::CPReLU}) {
        std::vector<ParamInit> params{{"x", random_tensor({2, 3, 4, 4}, rng, 0.05)}};
        if (kind == ActivationKind::CPReLU) {
            ComplexTensor<double> slope(Shape{3});
            for (std::size_t c = 0; c < 3; ++c)
                slope.re()[c] = 0.25 + 0.1 * double(c);
            params.push_back({"slope", slope, false, true});
        }
        cases.push_back(make_case(std::string("activation[") + to_string(kind) + "]", params,
                                  [kind](auto& tape, auto& p) {
                                      using V = std::remove_reference_t<decltype(p[0])>;
                                      const V slope = p.size() > 1 ? p[1] : V();
                                      return project(tape, op::activate(tape, p[0], kind, slope));
                                  }));
    }

    for (auto variant : {PoolVariant::RealSplit, PoolVariant::Amplitude, PoolVariant::Area}) {
        cases.push_back(make_case(std::string("complex_maxpool[") + to_string(variant) + "]",
                                  {{"x", random_tensor({2, 2, 6, 6}, rng)}}, [variant](auto& tape, auto& p) {
                                      return project(tape, op::max_pool(tape, p[0], PoolOptions{variant, 2, 2}));
                                  }));
    }
    // Overlapping windows route one input to several outputs.
    cases.push_back(make_case("complex_maxpool[area,window3]", {{"x", random_tensor({1, 2, 7, 7}, rng)}},
                              [](auto& tape, auto& p) {
                                  return project(tape, op::max_pool(tape, p[0], PoolOptions{PoolVariant::Area, 3, 2}));
                              }));

    cases.push_back(make_case("complex_linear",
                              {{"x", random_tensor({3, 5}, rng)},
                               {"weight", random_tensor({4, 5}, rng)},
                               {"bias", random_tensor({4}, rng)}},
                              [](auto& tape, auto& p) { return project(tape, op::linear(tape, p[0], p[1], p[2])); }));

    for (auto r : {Readout::Modulus, Readout::RealPart, Readout::SquaredModulus}) {
        cases.push_back(make_case(std::string("amplitude_layer[") + to_string(r) + "]",
                                  {{"x", random_tensor({3, 4}, rng, 0.1)}},
                                  [r](auto& tape, auto& p) { return project(tape, op::readout(tape, p[0], r)); }));
    }

    cases.push_back(make_case("softmax_cross_entropy", {{"logits", random_tensor({4, 3}, rng), false, true}},
                              [](auto& tape, auto& p) { return op::cross_entropy(tape, p[0], {0, 2, 1, 2}); }));
    return cases;
}

template <typename T>
std::vector<Variable<T>> make_params(const std::vector<ParamInit>& inits)
{
    std::vector<Variable<T>> out;
    for (const auto& i : inits) {
        out.emplace_back(cast_tensor<T>(i.value), true, i.name);
        out.back().set_frozen(i.frozen_re, i.frozen_im);
    }
    return out;
}

template <typename T>
std::vector<ComplexTensor<double>> analytic_grads(std::vector<Variable<T>>& params, const Builder<T>& f)
{
    zero_grads(params);
    Tape<T> tape;
    tape.backward(f(tape, params));
    std::vector<ComplexTensor<double>> out;
    for (auto& p : params)
        out.push_back(cast<double>(p.grad()));
    return out;
}

double normwise_rel(const std::vector<ComplexTensor<double>>& a, const std::vector<ComplexTensor<double>>& b)
{
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = 0, ref = 0;
        for (auto [pa, pb] : {std::pair{a[i].re(), b[i].re()}, std::pair{a[i].im(), b[i].im()}})
            for (std::size_t k = 0; k < pa.size(); ++k) {
                diff += (pa[k] - pb[k]) * (pa[k] - pb[k]);
                ref += pb[k] * pb[k];
            }
        if (ref > 0)
            worst = std::max(worst, std::sqrt(diff / ref));
        else if (diff > 0)
            worst = std::max(worst, 1.0);
    }
    return worst;
}

void corrupt(std::vector<Variable<double>>& params)
{
    for (auto& p : params) {
        auto& g = p.mutable_grad();
        for (auto plane : {g.re(), g.im()})
            for (auto& v : plane)
                v = 1.5 * v + 1e-3;
    }
}

OpCheck run_case(const Case& c, const GradcheckSuiteOptions& opts)
{
    OpCheck out;
    out.op = c.name;
    auto params = make_params<double>(c.params);
    GradCheckOptions check = opts.check;
    if (opts.inject_fault == c.name)
        check.after_backward = corrupt;
    auto p64 = params;
    out.report = grad_check([&](Tape<double>& tape) { return c.f64(tape, p64); }, params, check);
    if (opts.precision_check) {
        auto q64 = make_params<double>(c.params);
        auto q32 = make_params<float>(c.params);
        out.precision_rel = normwise_rel(analytic_grads<float>(q32, c.f32), analytic_grads<double>(q64, c.f64));
    }
    return out;
}

template <typename T>
struct MicroGraph {
    std::unique_ptr<Model<T>> model;
    ComplexTensor<T> batch;
    std::vector<int> labels{0, 1, 2, 0};
};

template <typename T>
MicroGraph<T> micro_graph(std::uint64_t seed)
{
    MicroGraph<T> g;
    g.model = build_cvnet5<T>(3, ActivationKind::CReLU, PoolVariant::Area, 1.0 / 16, 32, seed);
    std::mt19937_64 rng(seed + 1);
    g.batch = cast_tensor<T>(random_tensor({4, 1, 32, 32}, rng));
    return g;
}

OpCheck run_model_case(const GradcheckSuiteOptions& opts)
{
    OpCheck out;
    out.op = kModelCase;
    auto g = micro_graph<double>(opts.seed);
    GradCheckOptions check = opts.check;
    if (opts.inject_fault == kModelCase)
        check.after_backward = corrupt;
    out.report = grad_check(
        [&](Tape<double>& tape) { return g.model->loss(tape, g.batch, g.labels, true); }, g.model->parameters(), check);
    if (opts.precision_check) {
        auto h = micro_graph<float>(opts.seed);
        // Same weights in both precisions: copy the float-rounded values.
        auto& pf = h.model->parameters();
        auto& pd = g.model->parameters();
        for (std::size_t i = 0; i < pd.size(); ++i)
            pd[i].mutable_value() = cast<double>(pf[i].value());
        g.batch = cast<double>(h.batch);
        Builder<float> f32 = [&](Tape<float>& tape, std::vector<Variable<float>>&) {
            return h.model->loss(tape, h.batch, h.labels, true);
        };
        Builder<double> f64 = [&](Tape<double>& tape, std::vector<Variable<double>>&) {
            return g.model->loss(tape, g.batch, g.labels, true);
        };
        out.precision_rel = normwise_rel(analytic_grads<float>(pf, f32), analytic_grads<double>(pd, f64));
    }
    return out;
}

}  // namespace

std::vector<std::string> gradcheck_ops(GradcheckScope scope)
{
    std::vector<std::string> names;
    if (scope != GradcheckScope::Model)
        for (const auto& c : layer_cases(0))
            names.push_back(c.name);
    if (scope != GradcheckScope::Layers)
        names.push_back(kModelCase);
    return names;
}

std::vector<OpCheck> run_gradcheck_suite(const GradcheckSuiteOptions& options)
{
    std::vector<OpCheck> out;
    if (options.scope != GradcheckScope::Model)
        for (const auto& c : layer_cases(options.seed))
            out.push_back(run_case(c, options));
    if (options.scope != GradcheckScope::Layers)
        out.push_back(run_model_case(options));
    return out;
}

}  // namespace cvnn
