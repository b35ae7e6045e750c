#include "cvnn/gradcheck.hpp"
#include "cvnn/layers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace cvnn;
using oracle::cd;

namespace {
const ComplexTensor<double>* const kNoBias = nullptr;
}

TEST_CASE("complex convolution equals the direct complex multiply-accumulate")
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> small(1, 3), spatial(3, 8), kernel(1, 3), pad(0, 1), stride(1, 2);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = small(rng), cin = small(rng), cout = small(rng), k = kernel(rng);
        const std::size_t h = spatial(rng), w = spatial(rng);
        const Conv2dOptions opt{stride(rng), pad(rng)};
        const auto x = oracle::random_tensor({n, cin, h, w}, rng);
        const auto kw = oracle::random_tensor({cout, cin, k, k}, rng);
        const auto b = oracle::random_tensor({cout}, rng);
        const auto got = complex_conv2d(x, kw, &b, opt);
        const auto want = oracle::conv2d(x, kw, &b, opt.stride, opt.padding);
        REQUIRE(got.shape() == want.shape());
        CHECK(oracle::max_rel_diff(got, want) < 1e-10);
    }
}

TEST_CASE("convolution with a purely real kernel acts on each part independently")
{
    std::mt19937_64 rng(3);
    auto x = oracle::random_tensor({1, 2, 5, 5}, rng);
    auto k = oracle::random_tensor({1, 2, 3, 3}, rng);
    std::fill(k.im().begin(), k.im().end(), 0.0);
    const auto out = complex_conv2d(x, k, kNoBias, {});
    ComplexTensor<double> re_only = x;
    std::fill(re_only.im().begin(), re_only.im().end(), 0.0);
    const auto from_re = complex_conv2d(re_only, k, kNoBias, {});
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.re()[i] == doctest::Approx(from_re.re()[i]).epsilon(1e-12));
}

TEST_CASE("convolution shape errors")
{
    const ComplexTensor<double> x(Shape{1, 2, 4, 4});
    CHECK_THROWS_AS(complex_conv2d(x, ComplexTensor<double>(Shape{1, 3, 3, 3}), kNoBias, {}), ShapeError);
    CHECK_THROWS_AS(complex_conv2d(x, ComplexTensor<double>(Shape{1, 2, 5, 5}), kNoBias, {}), ShapeError);
    CHECK_THROWS_AS(complex_conv2d(ComplexTensor<double>(Shape{2, 4, 4}), ComplexTensor<double>(Shape{1, 2, 3, 3}),
                                   kNoBias, {}),
                    ShapeError);
    const ComplexTensor<double> bad_bias(Shape{2});
    CHECK_THROWS_AS(complex_conv2d(x, ComplexTensor<double>(Shape{1, 2, 3, 3}), &bad_bias, {}), ShapeError);
}

TEST_CASE("closed-form inverse square root of a 2x2 covariance")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int i = 0; i < 50; ++i) {
        // V = A Aᵀ is symmetric positive semi-definite.
        const double a = d(rng), b = d(rng), c = d(rng), e = d(rng);
        const double vrr = a * a + b * b, vri = a * c + b * e, vii = c * c + e * e;
        const double eps = 1e-5;
        const auto w = inverse_sqrt_2x2(vrr, vri, vii, eps);
        // W V_eps W = I for symmetric W.
        const double v11 = vrr + eps, v12 = vri, v22 = vii + eps;
        const double m11 = w.w11 * v11 + w.w12 * v12, m12 = w.w11 * v12 + w.w12 * v22;
        const double m21 = w.w12 * v11 + w.w22 * v12, m22 = w.w12 * v12 + w.w22 * v22;
        CHECK(m11 * w.w11 + m12 * w.w12 == doctest::Approx(1).epsilon(1e-8));
        CHECK(m11 * w.w12 + m12 * w.w22 == doctest::Approx(0).epsilon(1e-8));
        CHECK(m21 * w.w12 + m22 * w.w22 == doctest::Approx(1).epsilon(1e-8));
        // W itself is positive definite.
        CHECK(w.w11 > 0);
        CHECK(w.w11 * w.w22 - w.w12 * w.w12 > 0);
    }
}

TEST_CASE("batch normalization whitens each channel")
{
    std::mt19937_64 rng(17);
    auto x = oracle::random_tensor({8, 3, 6, 6}, rng);
    // Correlated, shifted, anisotropic channels.
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = x.re()[i], m = x.im()[i];
        x.re()[i] = 3 * r + 2;
        x.im()[i] = 1.5 * r + 0.2 * m - 1;
    }
    BatchNormState<double> state(3);
    const auto y = complex_batchnorm(x, state, true);
    for (const auto& mo : oracle::channel_moments(y)) {
        CHECK(std::abs(mo.mean_re) < 1e-8);
        CHECK(std::abs(mo.mean_im) < 1e-8);
        // ε slightly shrinks the result; the bound accounts for it.
        CHECK(std::abs(mo.vrr - 1) < 1e-3);
        CHECK(std::abs(mo.vri) < 1e-3);
        CHECK(std::abs(mo.vii - 1) < 1e-3);
    }
}

TEST_CASE("batch normalization running statistics and evaluation mode")
{
    std::mt19937_64 rng(23);
    auto x = oracle::random_tensor({4, 2, 4, 4}, rng);
    for (std::size_t i = 0; i < x.size(); ++i)
        x.re()[i] += 5;
    BatchNormState<double> state(2);
    CHECK(state.running_cov[0] == 1);
    CHECK(state.running_cov[1] == 0);
    CHECK(state.running_cov[2] == 1);
    const auto mo = oracle::channel_moments(x);
    complex_batchnorm(x, state, true);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(state.running_mean.re()[c] == doctest::Approx(0.1 * mo[c].mean_re));
        CHECK(state.running_mean.im()[c] == doctest::Approx(0.1 * mo[c].mean_im));
        CHECK(state.running_cov[3 * c] == doctest::Approx(0.9 + 0.1 * mo[c].vrr));
        CHECK(state.running_cov[3 * c + 1] == doctest::Approx(0.1 * mo[c].vri));
        CHECK(state.running_cov[3 * c + 2] == doctest::Approx(0.9 + 0.1 * mo[c].vii));
    }
    // Evaluation leaves the statistics alone and applies them.
    const auto before = state.running_cov.data()[0];
    BatchNormState<double> fresh(2);
    const auto y = complex_batchnorm(x, fresh, false);
    CHECK(state.running_cov.data()[0] == before);
    const double s = 1 / std::sqrt(1 + 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y.re()[i] == doctest::Approx(x.re()[i] * s).epsilon(1e-12));
        CHECK(y.im()[i] == doctest::Approx(x.im()[i] * s).epsilon(1e-12));
    }
}

TEST_CASE("batch normalization applies gamma and beta")
{
    std::mt19937_64 rng(29);
    const auto x = oracle::random_tensor({6, 1, 4, 4}, rng);
    BatchNormState<double> s1(1), s2(1);
    const auto white = complex_batchnorm(x, s1, true);
    ComplexTensor<double> gd(Shape{1}, {2.0}, {0.5});
    ComplexTensor<double> go(Shape{1}, {0.3}, {0.0});
    ComplexTensor<double> beta(Shape{1}, {1.0}, {-2.0});
    const auto y = complex_batchnorm(x, s2, true, &gd, &go, &beta);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y.re()[i] == doctest::Approx(2.0 * white.re()[i] + 0.3 * white.im()[i] + 1.0));
        CHECK(y.im()[i] == doctest::Approx(0.3 * white.re()[i] + 0.5 * white.im()[i] - 2.0));
    }
}

TEST_CASE("batch normalization rejects single-value channels in training")
{
    BatchNormState<double> s(2);
    CHECK_THROWS_AS(complex_batchnorm(ComplexTensor<double>(Shape{1, 2, 1, 1}), s, true), ShapeError);
    CHECK_THROWS_AS(complex_batchnorm(ComplexTensor<double>(Shape{4, 3, 2, 2}), s, true), ShapeError);
}

TEST_CASE("split activations")
{
    const ComplexTensor<double> z(Shape{1, 2, 1, 2}, {-1.5, 0.0, 2.0, -0.25}, {0.5, -2.0, -0.0, 3.0});
    const auto r = activation(z, ActivationKind::CReLU);
    CHECK(r.re()[0] == 0);
    CHECK(r.im()[0] == 0.5);
    CHECK(r.im()[1] == 0);
    CHECK(r.re()[2] == 2);

    const auto t = activation(z, ActivationKind::CTanh);
    CHECK(t.re()[0] == doctest::Approx(std::tanh(-1.5)));
    CHECK(t.im()[3] == doctest::Approx(std::tanh(3.0)));

    const auto e = activation(z, ActivationKind::CELU);
    CHECK(e.re()[0] == doctest::Approx(std::exp(-1.5) - 1));
    CHECK(e.im()[1] == doctest::Approx(std::exp(-2.0) - 1));
    CHECK(e.im()[3] == 3.0);

    const ComplexTensor<double> slope(Shape{2}, {0.25, 0.5}, {0, 0});
    const auto p = activation(z, ActivationKind::CPReLU, &slope);
    CHECK(p.re()[0] == doctest::Approx(-0.375));  // channel 0
    CHECK(p.im()[1] == doctest::Approx(-0.5));    // channel 0
    CHECK(p.re()[3] == doctest::Approx(-0.125));  // channel 1
    CHECK_THROWS_AS(activation(z, ActivationKind::CPReLU), ShapeError);
}

TEST_CASE("activation derivative at zero is the right-hand one")
{
    for (auto kind : {ActivationKind::CReLU, ActivationKind::CELU, ActivationKind::CPReLU}) {
        Variable<double> x(ComplexTensor<double>(Shape{1, 1}, {0.0}, {0.0}), true, "x");
        Variable<double> slope(ComplexTensor<double>(Shape{1}, {0.25}, {0}));
        Tape<double> tape;
        tape.backward(op::sum_real(tape, op::activate(tape, x, kind, slope)));
        CHECK(x.grad().re()[0] == 1.0);
    }
}

TEST_CASE("pooling on the fixed four-element window")
{
    // {3+0j, 1+2j, 2+2j, 0+4j} as a 2x2 window in row-major order.
    const ComplexTensor<double> w(Shape{1, 1, 2, 2}, {3, 1, 2, 0}, {0, 2, 2, 4});
    const auto amp = complex_maxpool(w, {PoolVariant::Amplitude, 2, 2});
    CHECK(amp.output.re()[0] == 0);
    CHECK(amp.output.im()[0] == 4);
    const auto area = complex_maxpool(w, {PoolVariant::Area, 2, 2});
    CHECK(area.output.re()[0] == 2);
    CHECK(area.output.im()[0] == 2);
    const auto split = complex_maxpool(w, {PoolVariant::RealSplit, 2, 2});
    CHECK(split.output.re()[0] == 3);
    CHECK(split.output.im()[0] == 4);
    CHECK(split.index_re[0] == 0);
    CHECK(split.index_im[0] == 3);
}

TEST_CASE("pooling ties go to the first element in row-major order")
{
    // All four have modulus 5 and area 12.
    const ComplexTensor<double> w(Shape{1, 1, 2, 2}, {3, -4, 4, -3}, {4, 3, -3, -4});
    for (auto v : {PoolVariant::Amplitude, PoolVariant::Area}) {
        const auto r = complex_maxpool(w, {v, 2, 2});
        CHECK(r.index_re[0] == 0);
        CHECK(r.index_im[0] == 0);
    }
    const ComplexTensor<double> flat(Shape{1, 1, 2, 2}, {1, 1, 1, 1}, {2, 2, 2, 2});
    const auto s = complex_maxpool(flat, {PoolVariant::RealSplit, 2, 2});
    CHECK(s.index_re[0] == 0);
    CHECK(s.index_im[0] == 0);
}

TEST_CASE("pooling agrees with a brute-force argmax on random windows")
{
    std::mt19937_64 rng(31);
    // Coarse integer grid so ties are common.
    std::uniform_int_distribution<int> g(-3, 3);
    for (int trial = 0; trial < 500; ++trial) {
        ComplexTensor<double> x(Shape{1, 1, 4, 4});
        for (std::size_t i = 0; i < 16; ++i) {
            x.re()[i] = g(rng);
            x.im()[i] = g(rng);
        }
        const auto amp = complex_maxpool(x, {PoolVariant::Amplitude, 2, 2});
        const auto area = complex_maxpool(x, {PoolVariant::Area, 2, 2});
        for (std::size_t oy = 0; oy < 2; ++oy)
            for (std::size_t ox = 0; ox < 2; ++ox) {
                std::vector<cd> win;
                std::vector<std::size_t> idx;
                for (std::size_t ky = 0; ky < 2; ++ky)
                    for (std::size_t kx = 0; kx < 2; ++kx) {
                        const std::size_t i = (2 * oy + ky) * 4 + 2 * ox + kx;
                        idx.push_back(i);
                        win.push_back({x.re()[i], x.im()[i]});
                    }
                const std::size_t o = oy * 2 + ox;
                CHECK(amp.index_re[o] == idx[oracle::first_argmax(win, oracle::amplitude)]);
                CHECK(area.index_re[o] == idx[oracle::first_argmax(win, oracle::area)]);
            }
    }
}

TEST_CASE("pooling backward routes gradients to the selected elements")
{
    const ComplexTensor<double> w(Shape{1, 1, 2, 2}, {3, 1, 2, 0}, {0, 2, 2, 4});
    for (auto v : {PoolVariant::RealSplit, PoolVariant::Amplitude, PoolVariant::Area}) {
        Variable<double> x(w, true, "x");
        Tape<double> tape;
        auto y = op::max_pool(tape, x, {v, 2, 2});
        tape.backward(op::inner(tape, y, ComplexTensor<double>(Shape{1, 1, 1, 1}, {1.0}, {10.0})));
        const auto r = complex_maxpool(w, {v, 2, 2});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(x.grad().re()[i] == (i == r.index_re[0] ? 1.0 : 0.0));
            CHECK(x.grad().im()[i] == (i == r.index_im[0] ? 10.0 : 0.0));
        }
    }
}

TEST_CASE("complex linear layer")
{
    std::mt19937_64 rng(37);
    const auto x = oracle::random_tensor({3, 4}, rng);
    const auto w = oracle::random_tensor({2, 4}, rng);
    const auto b = oracle::random_tensor({2}, rng);
    const auto y = complex_linear(x, w, &b);
    REQUIRE(y.shape() == Shape{3, 2});
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t o = 0; o < 2; ++o) {
            cd acc = oracle::at(b, o);
            for (std::size_t f = 0; f < 4; ++f)
                acc += oracle::at(w, o * 4 + f) * oracle::at(x, n * 4 + f);
            CHECK(y.re()[n * 2 + o] == doctest::Approx(acc.real()).epsilon(1e-12));
            CHECK(y.im()[n * 2 + o] == doctest::Approx(acc.imag()).epsilon(1e-12));
        }
}

TEST_CASE("amplitude readout, softmax and cross-entropy")
{
    const ComplexTensor<double> z(Shape{2, 3}, {3, 0, 1, 0.5, -2, 0}, {4, 0, -1, 0, 0, 1});
    const auto a = amplitude_layer(z);
    CHECK(a[0] == 5);
    CHECK(a[1] == 0);
    CHECK(a[2] == doctest::Approx(std::sqrt(2.0)));

    const RealTensor<double> logits(Shape{2, 3}, {1, 2, 3, 0, 0, 0});
    const auto p = softmax(logits);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1));
    CHECK(p[4] == doctest::Approx(1.0 / 3));
    const std::vector<int> labels{2, 1};
    const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    const double l1 = std::log(3.0);
    CHECK(softmax_cross_entropy(logits, std::span<const int>(labels)) == doctest::Approx((l0 + l1) / 2));
    const std::vector<int> bad{3, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(bad)), Error);

    // Large logits stay finite.
    const RealTensor<double> big(Shape{1, 2}, {1000, 0});
    const std::vector<int> l{1};
    CHECK(softmax_cross_entropy(big, std::span<const int>(l)) == doctest::Approx(1000));
}

TEST_CASE("enum names round-trip")
{
    for (auto k : {ActivationKind::CReLU, ActivationKind::CTanh, ActivationKind::CELU, ActivationKind::CPReLU})
        CHECK(parse_activation(to_string(k)) == k);
    for (auto v : {PoolVariant::RealSplit, PoolVariant::Amplitude, PoolVariant::Area})
        CHECK(parse_pool_variant(to_string(v)) == v);
    for (auto r : {Readout::Modulus, Readout::RealPart, Readout::SquaredModulus})
        CHECK(parse_readout(to_string(r)) == r);
    CHECK_THROWS_AS(parse_activation("relu"), Error);
    CHECK_THROWS_AS(parse_pool_variant("max"), Error);
}

TEST_CASE("every layer op passes the finite-difference check")
{
    GradcheckSuiteOptions opts;
    opts.scope = GradcheckScope::Layers;
    opts.precision_check = true;
    const auto results = run_gradcheck_suite(opts);
    CHECK(results.size() == gradcheck_ops(GradcheckScope::Layers).size());
    for (const auto& r : results) {
        CAPTURE(r.op);
        CHECK(passed(r));
        CHECK(r.report.checked > 0);
        CHECK(r.report.max_rel_error < 1e-4);
    }
    // Coverage: each forward function of the module appears.
    const auto ops = gradcheck_ops(GradcheckScope::Layers);
    for (const char* name : {"complex_conv2d", "complex_batchnorm[train]", "complex_batchnorm[eval]",
                             "activation[crelu]", "activation[ctanh]", "activation[celu]", "activation[cprelu]",
                             "complex_maxpool[real-split]", "complex_maxpool[amplitude]", "complex_maxpool[area]",
                             "complex_linear", "amplitude_layer[modulus]", "softmax_cross_entropy"})
        CHECK(std::find(ops.begin(), ops.end(), name) != ops.end());
}

TEST_CASE("a corrupted backward rule is reported under its op name")
{
    GradcheckSuiteOptions opts;
    opts.scope = GradcheckScope::Layers;
    opts.inject_fault = "complex_batchnorm[train]";
    for (const auto& r : run_gradcheck_suite(opts)) {
        CAPTURE(r.op);
        CHECK(passed(r) == (r.op != opts.inject_fault));
        if (r.op == opts.inject_fault)
            CHECK_FALSE(r.report.failures.empty());
    }
}

TEST_CASE("convolution worked examples")
{
    std::mt19937_64 rng(41);
    const auto x = oracle::random_tensor({2, 1, 3, 4}, rng);
    const auto ident = complex_conv2d(x, ComplexTensor<double>(Shape{1, 1, 1, 1}, {1.0}, {0.0}), kNoBias, {});
    CHECK(oracle::max_rel_diff(ident, x) == 0);
    const auto rot = complex_conv2d(x, ComplexTensor<double>(Shape{1, 1, 1, 1}, {0.0}, {1.0}), kNoBias, {});
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(rot.re()[i] == -x.im()[i]);
        CHECK(rot.im()[i] == x.re()[i]);
    }
    // (1+1j)·[(1+1j) + 2 + (0-1j) + (1+2j)] = (1+1j)(4+2j) = 2+6j
    const ComplexTensor<double> in(Shape{1, 1, 2, 2}, {1, 2, 0, 1}, {1, 0, -1, 2});
    const ComplexTensor<double> k(Shape{1, 1, 2, 2}, {1, 1, 1, 1}, {1, 1, 1, 1});
    const auto y = complex_conv2d(in, k, kNoBias, {});
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.re()[0] == doctest::Approx(2));
    CHECK(y.im()[0] == doctest::Approx(6));
}

TEST_CASE("batch normalization worked examples")
{
    // Constant channel: the centred data vanish and only beta remains.
    ComplexTensor<double> c(Shape{4, 1, 2, 2});
    c.fill(0.7, -1.3);
    ComplexTensor<double> gd(Shape{1}, {1.0}, {1.0}), go(Shape{1}, {0.0}, {0.0}), beta(Shape{1}, {0.25}, {-0.5});
    BatchNormState<double> s1(1);
    const auto yc = complex_batchnorm(c, s1, true, &gd, &go, &beta);
    for (std::size_t i = 0; i < yc.size(); ++i) {
        CHECK(yc.re()[i] == doctest::Approx(0.25));
        CHECK(yc.im()[i] == doctest::Approx(-0.5));
    }

    // {1+0j, -1+0j}: V = diag(1, 0), so V_eps^{-1/2} = diag(1/sqrt(1+eps), 1/sqrt(eps)).
    const ComplexTensor<double> pm(Shape{2, 1, 1, 1}, {1, -1}, {0, 0});
    BatchNormState<double> s2(1);
    const auto y = complex_batchnorm(pm, s2, true, &gd, &go, &go);
    CHECK(y.re()[0] == doctest::Approx(1 / std::sqrt(1 + 1e-5)).epsilon(1e-12));
    CHECK(y.re()[1] == doctest::Approx(-1 / std::sqrt(1 + 1e-5)).epsilon(1e-12));
    CHECK(y.im()[0] == 0);
    const auto w = inverse_sqrt_2x2(1.0, 0.0, 0.0, 1e-5);
    CHECK(w.w11 == doctest::Approx(1 / std::sqrt(1 + 1e-5)).epsilon(1e-12));
    CHECK(w.w22 == doctest::Approx(1 / std::sqrt(1e-5)).epsilon(1e-12));
    CHECK(w.w12 == 0);
}

TEST_CASE("activation worked examples")
{
    const ComplexTensor<double> z(Shape{4}, {-1, -3, 0, -1}, {-2, 2, 0, 1});
    const auto r = activation(z, ActivationKind::CReLU);
    CHECK(r.re()[0] == 0);
    CHECK(r.im()[0] == 0);
    CHECK(r.re()[1] == 0);
    CHECK(r.im()[1] == 2);
    const auto t = activation(z, ActivationKind::CTanh);
    CHECK(t.re()[2] == 0);
    CHECK(t.im()[2] == 0);
    const auto e = activation(z, ActivationKind::CELU);
    CHECK(e.re()[3] == doctest::Approx(std::exp(-1.0) - 1));
    CHECK(e.im()[3] == 1);
}

TEST_CASE("pooling worked examples and properties")
{
    const ComplexTensor<double> zero(Shape{1, 1, 2, 2});
    for (auto v : {PoolVariant::RealSplit, PoolVariant::Amplitude, PoolVariant::Area}) {
        const auto r = complex_maxpool(zero, {v, 2, 2});
        CHECK(r.output.re()[0] == 0);
        CHECK(r.output.im()[0] == 0);
        CHECK(r.index_re[0] == 0);
        CHECK(r.index_im[0] == 0);
    }
    // RealSplit can synthesize a value present in no input element.
    const ComplexTensor<double> two(Shape{1, 1, 2, 2}, {1, -2, -9, -9}, {-5, 3, -9, -9});
    const auto s = complex_maxpool(two, {PoolVariant::RealSplit, 2, 2});
    CHECK(s.output.re()[0] == 1);
    CHECK(s.output.im()[0] == 3);

    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> scale(0.01, 100);
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = oracle::random_tensor({1, 2, 4, 4}, rng);
        for (auto v : {PoolVariant::Amplitude, PoolVariant::Area}) {
            const auto r = complex_maxpool(x, {v, 2, 2});
            // Selected values are always elements of the window.
            for (std::size_t o = 0; o < r.output.size(); ++o) {
                CHECK(r.index_re[o] == r.index_im[o]);
                CHECK(r.output.re()[o] == x.re()[r.index_re[o]]);
                CHECK(r.output.im()[o] == x.im()[r.index_re[o]]);
            }
            // A positive rescale leaves the choice unchanged.
            auto y = x;
            const double c = scale(rng);
            for (std::size_t i = 0; i < y.size(); ++i) {
                y.re()[i] *= c;
                y.im()[i] *= c;
            }
            CHECK(complex_maxpool(y, {v, 2, 2}).index_re == r.index_re);
        }
    }
    CHECK_THROWS_AS(complex_maxpool(zero, {PoolVariant::Area, 3, 3}), ShapeError);
}

TEST_CASE("linear, amplitude and loss worked examples")
{
    std::mt19937_64 rng(47);
    const auto x = oracle::random_tensor({2, 3}, rng);
    ComplexTensor<double> eye(Shape{3, 3}), jeye(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        eye.re()[i * 3 + i] = 1;
        jeye.im()[i * 3 + i] = 1;
    }
    CHECK(oracle::max_rel_diff(complex_linear(x, eye, kNoBias), x) == 0);
    const auto jx = complex_linear(x, jeye, kNoBias);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(jx.re()[i] == -x.im()[i]);
        CHECK(jx.im()[i] == x.re()[i]);
    }
    const auto y = complex_linear(ComplexTensor<double>(Shape{1, 2}, {1, 2}, {1, -1}),
                                  ComplexTensor<double>(Shape{1, 2}, {1, 0}, {0, 1}), kNoBias);
    CHECK(y.re()[0] == 2);
    CHECK(y.im()[0] == 3);
    CHECK_THROWS_AS(complex_linear(x, ComplexTensor<double>(Shape{3, 4}), kNoBias), ShapeError);

    const auto a = amplitude_layer(ComplexTensor<double>(Shape{1, 3}, {1, 0, -3}, {0, 2, -4}));
    CHECK(a[0] == 1);
    CHECK(a[1] == 2);
    CHECK(a[2] == 5);
    Variable<double> z(ComplexTensor<double>(Shape{1, 2}, {0, 3}, {0, 4}), true, "z");
    Tape<double> tape;
    auto r = op::readout(tape, z);
    tape.backward(op::sum_real(tape, r));
    CHECK(z.grad().re()[0] == 0);
    CHECK(z.grad().im()[0] == 0);
    CHECK(z.grad().re()[1] == doctest::Approx(0.6));
    CHECK(z.grad().im()[1] == doctest::Approx(0.8));

    const std::vector<int> l0{0}, l2{2};
    CHECK(softmax_cross_entropy(RealTensor<double>(Shape{1, 5}, std::vector<double>(5, 0.3)),
                                std::span<const int>(l0)) == doctest::Approx(1.6094379124341003));
    CHECK(softmax_cross_entropy(RealTensor<double>(Shape{1, 2}, {1000, 0}), std::span<const int>(l0)) ==
          doctest::Approx(0.0));
    CHECK(softmax_cross_entropy(RealTensor<double>(Shape{1, 3}, {1, 2, 3}), std::span<const int>(l2)) ==
          doctest::Approx(0.40760596444438));
}
