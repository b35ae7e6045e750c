#include "cvnn/data.hpp"
#include "cvnn/model.hpp"
#include "cvnn/train.hpp"

#include <doctest.h>

#include <random>

using namespace cvnn;

namespace {

// Maps each pixel through one of the eight symmetries of the square lattice
// (sign flips and re/im swap). The modulus is preserved bit-for-bit.
ComplexTensor<float> rephase(const ComplexTensor<float>& x, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    ComplexTensor<float> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const unsigned s = unsigned(rng() & 7);
        float a = x.re()[i], b = x.im()[i];
        if (s & 1)
            std::swap(a, b);
        out.re()[i] = (s & 2) ? -a : a;
        out.im()[i] = (s & 4) ? -b : b;
    }
    return out;
}

ComplexTensor<float> random_batch(Shape shape, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d;
    ComplexTensor<float> x(std::move(shape));
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.re()[i] = d(rng);
        x.im()[i] = d(rng);
    }
    return x;
}

ComplexTensor<float> logits(Model<float>& m, const ComplexTensor<float>& x)
{
    Tape<float> tape(false);
    return m.forward(tape, x, false).value();
}

bool bit_equal(const ComplexTensor<float>& a, const ComplexTensor<float>& b)
{
    return a.shape() == b.shape() && std::equal(a.re().begin(), a.re().end(), b.re().begin()) &&
           std::equal(a.im().begin(), a.im().end(), b.im().begin());
}

std::size_t real_count(const std::vector<std::size_t>& convs, std::size_t in_ch, std::size_t flat,
                       const std::vector<std::size_t>& fc, bool amplitude_only)
{
    // Conv kernels (no bias), BN (γ_rr, γ_ii, γ_ri, β re/im), FC weights and biases.
    const std::size_t planes = amplitude_only ? 1 : 2;
    std::size_t n = 0, prev = in_ch;
    for (std::size_t c : convs) {
        n += planes * prev * c * 9 + (amplitude_only ? 2 : 5) * c;
        prev = c;
    }
    prev = flat;
    for (std::size_t w : fc) {
        n += planes * (prev * w + w);
        prev = w;
    }
    return n;
}

}  // namespace

TEST_CASE("width scaling rounds up and never reaches zero")
{
    CHECK(scale_width(64, 1.0 / 16) == 4);
    CHECK(scale_width(512, 1.0 / 16) == 32);
    CHECK(scale_width(16, 1.0 / 64) == 1);
    CHECK(scale_width(3, 0.5) == 2);
    CHECK(scale_width(10, 0.1) == 1);
    CHECK(scale_width(64, 1.0) == 64);
}

TEST_CASE("CVGG-Net layer census at full width")
{
    const auto spec = cvggnet_spec(3, ActivationKind::CReLU, PoolVariant::Area, 1.0, 32);
    CHECK(spec.conv_blocks() == 13);
    CHECK(spec.pool_layers() == 5);
    CHECK(spec.fc_layers() == 3);
    CHECK(spec.fc_widths == std::vector<std::size_t>{4096, 4096, 3});
    std::vector<std::size_t> channels;
    for (const auto& b : spec.blocks)
        if (b.kind == BlockSpec::Kind::Conv)
            channels.push_back(b.channels);
    CHECK(channels == std::vector<std::size_t>(std::begin(kCvggChannels), std::end(kCvggChannels)));
    // A pool closes each group.
    std::size_t pos = 0;
    for (std::size_t g : kCvggGroups) {
        pos += g;
        REQUIRE(pos < spec.blocks.size());
        CHECK(spec.blocks[pos].kind == BlockSpec::Kind::Pool);
        ++pos;
    }
}

TEST_CASE("CVGG-Net at 1/16 width")
{
    auto m = build_cvggnet<float>(3, ActivationKind::CReLU, PoolVariant::Area, 1.0 / 16, 32, 1);
    const auto c = m->census();
    CHECK(c.conv_blocks == 13);
    CHECK(c.pools == 5);
    CHECK(c.fully_connected == 3);
    CHECK(c.amplitude == 1);
    CHECK(c.softmax == 1);
    std::vector<std::size_t> channels;
    for (const auto& b : m->spec().blocks)
        if (b.kind == BlockSpec::Kind::Conv)
            channels.push_back(b.channels);
    CHECK(channels == std::vector<std::size_t>{4, 4, 8, 8, 16, 16, 16, 32, 32, 32, 32, 32, 32});
    CHECK(m->spec().fc_widths == std::vector<std::size_t>{256, 256, 3});

    const auto y = logits(*m, random_batch({2, 1, 32, 32}, 3));
    CHECK(y.shape() == Shape{2, 3});
    CHECK(y.all_finite());
    CHECK(m->trainable_real_count() ==
          real_count({4, 4, 8, 8, 16, 16, 16, 32, 32, 32, 32, 32, 32}, 1, 32, {256, 256, 3}, false));
}

TEST_CASE("CVnet5 structure and output shape")
{
    auto m = build_cvnet5<float>(4, ActivationKind::CReLU, PoolVariant::Area, 1.0, 32, 2);
    const auto c = m->census();
    CHECK(c.conv_blocks == 5);
    CHECK(c.pools == 5);
    CHECK(c.fully_connected == 1);
    CHECK(c.amplitude == 1);
    const auto y = logits(*m, random_batch({4, 1, 32, 32}, 4));
    CHECK(y.shape() == Shape{4, 4});
    CHECK(y.all_finite());
    CHECK(m->trainable_real_count() == real_count({16, 32, 64, 128, 128}, 1, 128, {4}, false));
}

TEST_CASE("larger inputs flatten the remaining spatial extent")
{
    auto m = build_cvnet5<float>(2, ActivationKind::CReLU, PoolVariant::Area, 0.25, 64, 2);
    CHECK(logits(*m, random_batch({1, 1, 64, 64}, 5)).shape() == Shape{1, 2});
    CHECK(m->trainable_real_count() == real_count({4, 8, 16, 32, 32}, 1, 32 * 4, {2}, false));
}

TEST_CASE("input sizes that five poolings cannot divide are rejected")
{
    for (std::size_t s : {0, 16, 33, 48, 100}) {
        CAPTURE(s);
        CHECK_THROWS_AS(cvggnet_spec(3, ActivationKind::CReLU, PoolVariant::Area, 1.0, s), Error);
        CHECK_THROWS_AS(cvnet5_spec(3, ActivationKind::CReLU, PoolVariant::Area, 1.0, s), Error);
    }
    auto m = build_cvnet5<float>(3, ActivationKind::CReLU, PoolVariant::Area, 0.25, 32, 1);
    CHECK_THROWS_AS(logits(*m, random_batch({1, 1, 64, 64}, 1)), ShapeError);
    CHECK_THROWS_AS(logits(*m, random_batch({1, 2, 32, 32}, 1)), ShapeError);
}

TEST_CASE("pooling variants do not change the parameter count")
{
    std::size_t counts[3];
    int i = 0;
    for (auto p : {PoolVariant::Area, PoolVariant::Amplitude, PoolVariant::RealSplit})
        counts[i++] = build_cvnet5<float>(3, ActivationKind::CReLU, p, 1.0, 32, 1)->trainable_real_count();
    CHECK(counts[0] == counts[1]);
    CHECK(counts[1] == counts[2]);
}

TEST_CASE("same seed gives the same weights")
{
    auto a = build_cvnet5<float>(3, ActivationKind::CPReLU, PoolVariant::Area, 0.25, 32, 9);
    auto b = build_cvnet5<float>(3, ActivationKind::CPReLU, PoolVariant::Area, 0.25, 32, 9);
    auto c = build_cvnet5<float>(3, ActivationKind::CPReLU, PoolVariant::Area, 0.25, 32, 10);
    const auto x = random_batch({2, 1, 32, 32}, 6);
    CHECK(bit_equal(logits(*a, x), logits(*b, x)));
    CHECK_FALSE(bit_equal(logits(*a, x), logits(*c, x)));
}

TEST_CASE("model spec text round-trips")
{
    auto spec = cvggnet_spec(5, ActivationKind::CELU, PoolVariant::Amplitude, 1.0 / 3, 64);
    spec.readout = Readout::SquaredModulus;
    spec.amplitude_only = true;
    CHECK(ModelSpec::from_text(spec.to_text()) == spec);
    const auto small = cvnet5_spec(2, ActivationKind::CPReLU, PoolVariant::RealSplit, 0.25, 32);
    CHECK(ModelSpec::from_text(small.to_text()) == small);
    CHECK_THROWS_AS(ModelSpec::from_text("name=x\nblocks=c4,q\n"), Error);
}

TEST_CASE("amplitude-only mode is blind to phase")
{
    auto full = build_cvnet5<float>(3, ActivationKind::CReLU, PoolVariant::Area, 0.25, 32, 7);
    auto amp = amplitude_only_mode(*full);
    CHECK(amp->amplitude_only());

    const auto x = random_batch({4, 1, 32, 32}, 8);
    const auto x2 = rephase(x, 99);
    CHECK(bit_equal(logits(*amp, x), logits(*amp, x2)));
    // The original model sees the difference.
    CHECK_FALSE(bit_equal(logits(*full, x), logits(*full, x2)));

    // Pure-phase inputs on the four axis directions: every sample gives the same logits.
    ComplexTensor<float> unit(Shape{4, 1, 32, 32});
    std::mt19937_64 rng(5);
    for (std::size_t i = 0; i < unit.size(); ++i) {
        const unsigned q = unsigned(rng() & 3);
        unit.re()[i] = q == 0 ? 1.f : q == 2 ? -1.f : 0.f;
        unit.im()[i] = q == 1 ? 1.f : q == 3 ? -1.f : 0.f;
    }
    const auto y = logits(*amp, unit);
    for (std::size_t n = 1; n < 4; ++n)
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(y.re()[n * 3 + k] == y.re()[k]);
            CHECK(y.im()[n * 3 + k] == y.im()[k]);
        }
}

TEST_CASE("amplitude-only mode freezes imaginary weights")
{
    auto full = build_cvnet5<float>(3, ActivationKind::CReLU, PoolVariant::Area, 0.25, 32, 7);
    auto amp = amplitude_only_mode(*full);
    for (auto& p : amp->parameters()) {
        CAPTURE(p.name());
        CHECK(p.frozen_im());
        for (float v : p.value().im())
            CHECK(v == 0.f);
    }
    // Conv and FC weights halve exactly. BN keeps γ_rr and β_re of its five reals per channel.
    const std::vector<std::size_t> ch{4, 8, 16, 32, 32};
    CHECK(full->trainable_real_count() == real_count(ch, 1, 32, {3}, false));
    CHECK(amp->trainable_real_count() == real_count(ch, 1, 32, {3}, true));
    const std::size_t bn = 4 + 8 + 16 + 32 + 32;
    CHECK(2 * (amp->trainable_real_count() - 2 * bn) == full->trainable_real_count() - 5 * bn);

    // Training keeps the frozen planes at zero.
    PhaseDatasetConfig cfg;
    cfg.samples_per_class = 10;
    const auto data = generate_phase_dataset(cfg);
    TrainConfig tc;
    tc.epochs = 2;
    tc.learning_rate = 1e-2;
    train(*amp, data.train, data.test, tc);
    for (auto& p : amp->parameters())
        for (float v : p.value().im())
            CHECK(v == 0.f);
}

TEST_CASE("amplitude-only CVnet5 learns amplitude-discriminable data")
{
    PhaseDatasetConfig cfg;
    cfg.amplitude_discriminable = true;
    cfg.seed = 3;
    const auto data = generate_phase_dataset(cfg);
    auto spec = cvnet5_spec(3, ActivationKind::CReLU, PoolVariant::Area, 0.25, 32);
    spec.amplitude_only = true;
    Model<float> m(spec, 7);
    TrainConfig tc;
    tc.epochs = 10;
    tc.learning_rate = 1e-3;
    const auto h = train(m, data.train, data.test, tc).history;
    MESSAGE("amplitude-only test accuracy " << h.back().test_accuracy);
    CHECK(h.back().test_accuracy > 0.90);
}
