#pragma once

#include "cvnn/autodiff.hpp"
#include "cvnn/layers.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cvnn {

struct BlockSpec {
    enum class Kind { Conv, Pool };
    Kind kind = Kind::Conv;
    std::size_t channels = 0;  // Conv only, after width scaling
    bool operator==(const BlockSpec&) const = default;
};

/// Declarative network description; serialized into checkpoint headers.
struct ModelSpec {
    std::string name;
    std::vector<BlockSpec> blocks;
    std::vector<std::size_t> fc_widths;  // hidden widths followed by num_classes
    std::size_t num_classes = 0;
    std::size_t in_channels = 1;
    std::size_t input_size = 32;
    double width_multiplier = 1.0;
    ActivationKind activation = ActivationKind::CReLU;
    PoolVariant pool = PoolVariant::Area;
    Readout readout = Readout::Modulus;
    bool amplitude_only = false;

    std::size_t conv_blocks() const;
    std::size_t pool_layers() const;
    std::size_t fc_layers() const { return fc_widths.size(); }

    /// key=value lines.
    std::string to_text() const;
    static ModelSpec from_text(const std::string& text);
    bool operator==(const ModelSpec&) const = default;
};

// VGG16's thirteen convolution widths and CVnet5's five; the latter has no
// published widths and is a project choice.
inline constexpr std::size_t kCvggChannels[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
inline constexpr std::size_t kCvggGroups[] = {2, 2, 3, 3, 3};
inline constexpr std::size_t kCvggHidden = 4096;
inline constexpr std::size_t kCvnet5Channels[] = {16, 32, 64, 128, 128};

/// ceil(channels · multiplier), at least 1.
std::size_t scale_width(std::size_t channels, double multiplier);

ModelSpec cvggnet_spec(std::size_t num_classes, ActivationKind activation, PoolVariant pool, double width_multiplier,
                       std::size_t input_size);
ModelSpec cvnet5_spec(std::size_t num_classes, ActivationKind activation, PoolVariant pool, double width_multiplier,
                      std::size_t input_size);

template <typename T>
struct BufferRef {
    std::string name;
    Shape shape;
    std::span<T> data;
};

template <typename T>
class Module {
public:
    virtual ~Module() = default;
    virtual Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) = 0;
    virtual void collect_parameters(std::vector<Variable<T>>&) {}
    virtual void collect_buffers(std::vector<BufferRef<T>>&) {}
    virtual std::string kind() const = 0;
};

template <typename T>
class ComplexConv2d : public Module<T> {
public:
    ComplexConv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dOptions options,
                  bool with_bias, std::mt19937_64& rng);
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    void collect_parameters(std::vector<Variable<T>>& out) override;
    std::string kind() const override { return "conv"; }

    Variable<T> kernel;
    Variable<T> bias;  // undefined when the layer has none
    Conv2dOptions options;
};

template <typename T>
class ComplexBatchNorm : public Module<T> {
public:
    ComplexBatchNorm(std::string name, std::size_t channels);
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    void collect_parameters(std::vector<Variable<T>>& out) override;
    void collect_buffers(std::vector<BufferRef<T>>& out) override;
    std::string kind() const override { return "batchnorm"; }

    Variable<T> gamma_diag;  // re = γ_rr, im = γ_ii
    Variable<T> gamma_off;   // re = γ_ri, imaginary plane unused
    Variable<T> beta;
    BatchNormState<T> state;
    std::string name;
};

template <typename T>
class ComplexActivation : public Module<T> {
public:
    ComplexActivation(std::string name, ActivationKind kind, std::size_t channels);
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    void collect_parameters(std::vector<Variable<T>>& out) override;
    std::string kind() const override { return "activation"; }

    ActivationKind activation;
    Variable<T> slope;  // CPReLU only
};

template <typename T>
class ComplexMaxPool : public Module<T> {
public:
    explicit ComplexMaxPool(PoolOptions options) : options(options) {}
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    std::string kind() const override { return "pool"; }

    PoolOptions options;
};

template <typename T>
class Flatten : public Module<T> {
public:
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    std::string kind() const override { return "flatten"; }
};

template <typename T>
class ComplexLinear : public Module<T> {
public:
    ComplexLinear(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    void collect_parameters(std::vector<Variable<T>>& out) override;
    std::string kind() const override { return "linear"; }

    Variable<T> weight;
    Variable<T> bias;
};

template <typename T>
class AmplitudeReadout : public Module<T> {
public:
    explicit AmplitudeReadout(Readout readout) : readout(readout) {}
    Variable<T> forward(Tape<T>& tape, const Variable<T>& x, bool training) override;
    std::string kind() const override { return "amplitude"; }

    Readout readout;
};

struct LayerCensus {
    std::size_t conv_blocks = 0;
    std::size_t pools = 0;
    std::size_t fully_connected = 0;
    std::size_t amplitude = 0;
    std::size_t softmax = 0;
};

template <typename T>
class Model {
public:
    Model(ModelSpec spec, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelSpec& spec() const { return spec_; }

    /// Real logits [N, num_classes] (imaginary plane zero).
    Variable<T> forward(Tape<T>& tape, const ComplexTensor<T>& batch, bool training);
    /// Mean softmax cross-entropy over the batch.
    Variable<T> loss(Tape<T>& tape, const ComplexTensor<T>& batch, const std::vector<int>& labels, bool training);
    /// Argmax class per sample, evaluation mode.
    std::vector<int> predict(const ComplexTensor<T>& batch);

    std::vector<Variable<T>>& parameters() { return params_; }
    std::vector<BufferRef<T>> buffers();

    /// Number of real scalars an optimizer may change.
    std::size_t trainable_real_count() const;
    LayerCensus census() const;
    const std::vector<std::unique_ptr<Module<T>>>& layers() const { return layers_; }

    /// Makes the network phase-blind: inputs become |z| + 0j, imaginary weight
    /// planes and the BN real/imaginary coupling are zeroed and frozen, and
    /// pooling becomes per-part (on a zero imaginary plane this is the real
    /// max-pool). The result computes a real-valued network of the same topology.
    void make_amplitude_only();
    bool amplitude_only() const { return spec_.amplitude_only; }

private:
    ComplexTensor<T> prepare_input(const ComplexTensor<T>& batch) const;

    ModelSpec spec_;
    std::vector<std::unique_ptr<Module<T>>> layers_;
    std::vector<Variable<T>> params_;
};

/// Convenience wrappers that build and initialize a model.
template <typename T>
std::unique_ptr<Model<T>> build_cvggnet(std::size_t num_classes, ActivationKind activation, PoolVariant pool,
                                        double width_multiplier, std::size_t input_size, std::uint64_t seed);
template <typename T>
std::unique_ptr<Model<T>> build_cvnet5(std::size_t num_classes, ActivationKind activation, PoolVariant pool,
                                       double width_multiplier, std::size_t input_size, std::uint64_t seed);

/// Phase-blind copy of `model`: same topology and current weights, with
/// make_amplitude_only() applied.
template <typename T>
std::unique_ptr<Model<T>> amplitude_only_mode(Model<T>& model);

}  // namespace cvnn
