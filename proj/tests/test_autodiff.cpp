#include "cvnn/autodiff.hpp"
#include "cvnn/layers.hpp"

#include <doctest.h>

#include <cmath>

using namespace cvnn;

namespace {

Variable<double> leaf(std::vector<double> re, std::vector<double> im, const char* name)
{
    const std::size_t n = re.size();
    return Variable<double>(ComplexTensor<double>(Shape{n}, std::move(re), std::move(im)), true, name);
}

}  // namespace

TEST_CASE("backward through mul and sum_abs2")
{
    auto a = leaf({1, 2}, {0.5, -1}, "a");
    auto b = leaf({3, -1}, {2, 0.25}, "b");
    Tape<double> tape;
    auto loss = op::sum_abs2(tape, op::mul(tape, a, b));
    tape.backward(loss);
    // L = Σ |a|²|b|²  =>  dL/da = 2|b|²·a in split form.
    for (std::size_t i = 0; i < 2; ++i) {
        const double b2 = b.value().re()[i] * b.value().re()[i] + b.value().im()[i] * b.value().im()[i];
        CHECK(a.grad().re()[i] == doctest::Approx(2 * b2 * a.value().re()[i]));
        CHECK(a.grad().im()[i] == doctest::Approx(2 * b2 * a.value().im()[i]));
    }
}

TEST_CASE("leaf gradients accumulate and zero_grads resets them")
{
    auto x = leaf({1, 2, 3}, {0, 0, 0}, "x");
    for (int pass = 1; pass <= 2; ++pass) {
        Tape<double> tape;
        tape.backward(op::sum_real(tape, x));
        CHECK(x.grad().re()[1] == pass);
    }
    std::vector<Variable<double>> params{x};
    zero_grads(params);
    CHECK(x.grad().re()[1] == 0);
}

TEST_CASE("a variable used twice receives both contributions")
{
    auto x = leaf({2}, {1}, "x");
    Tape<double> tape;
    tape.backward(op::sum_real(tape, op::add(tape, x, x)));
    CHECK(x.grad().re()[0] == 2);
    CHECK(x.grad().im()[0] == 0);
}

TEST_CASE("nodes unreachable from the loss are skipped")
{
    auto x = leaf({1}, {1}, "x");
    auto y = leaf({5}, {5}, "y");
    Tape<double> tape;
    auto unused = op::sum_abs2(tape, y);
    auto loss = op::sum_real(tape, x);
    tape.backward(loss);
    CHECK(x.grad().re()[0] == 1);
    CHECK_FALSE(y.has_grad());
    (void)unused;
}

TEST_CASE("non-recording tapes and constant inputs record nothing")
{
    auto x = leaf({1}, {1}, "x");
    Tape<double> off(false);
    op::sum_real(off, x);
    CHECK(off.size() == 0);
    Tape<double> on;
    Variable<double> c(ComplexTensor<double>(Shape{1}, {1}, {0}));
    op::sum_real(on, c);
    CHECK(on.size() == 0);
    op::sum_real(on, x);
    CHECK(on.size() == 1);
}

TEST_CASE("backward rejects a non-scalar loss")
{
    auto x = leaf({1, 2}, {0, 0}, "x");
    Tape<double> tape;
    auto y = op::add(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("grad_check passes a correct graph and catches a corrupted gradient")
{
    auto a = leaf({0.3, -0.7, 1.1}, {0.2, 0.9, -0.4}, "a");
    auto b = leaf({1.5, 0.1, -0.6}, {-0.8, 0.5, 0.3}, "b");
    const LossBuilder f = [&](Tape<double>& t) { return op::sum_abs2(t, op::mul(t, a, b)); };
    const auto ok = grad_check(f, {a, b}, {});
    CHECK(ok.passed);
    CHECK(ok.checked == 12);
    CHECK(ok.max_rel_error < 1e-6);

    GradCheckOptions bad;
    bad.after_backward = [](std::vector<Variable<double>>& ps) { ps[1].mutable_grad().im()[2] *= 1.01; };
    const auto caught = grad_check(f, {a, b}, bad);
    CHECK_FALSE(caught.passed);
    REQUIRE(caught.failures.size() == 1);
    CHECK(caught.failures[0].param == "b");
    CHECK(caught.failures[0].index == 2);
    CHECK(caught.failures[0].imag);
}

TEST_CASE("grad_check skips frozen planes")
{
    auto a = leaf({0.3, -0.7}, {0.2, 0.9}, "a");
    a.set_frozen(false, true);
    const auto r = grad_check([&](Tape<double>& t) { return op::sum_abs2(t, a); }, {a}, {});
    CHECK(r.checked == 2);
}

TEST_CASE("grad_check refuses a nondeterministic loss")
{
    auto a = leaf({0.3}, {0.2}, "a");
    int calls = 0;
    const LossBuilder f = [&](Tape<double>& t) {
        ++calls;
        Variable<double> noise(ComplexTensor<double>(Shape{1}, {double(calls)}, {0}));
        return op::sum_real(t, op::add(t, a, noise));
    };
    CHECK_THROWS_AS(grad_check(f, {a}, {}), NondeterministicError);
}

TEST_CASE("grad_check excludes coordinates whose step crosses a kink")
{
    // x.re sits 3e-6 from the CReLU kink, well inside the ±1e-5 step.
    auto x = leaf({3e-6, 0.5}, {0.4, -0.6}, "x");
    const auto r = grad_check(
        [&](Tape<double>& t) { return op::sum_real(t, op::activate(t, x, ActivationKind::CReLU, {})); }, {x}, {});
    CHECK(r.straddled == 1);
    CHECK(r.checked == 3);
    CHECK(r.passed);
}
