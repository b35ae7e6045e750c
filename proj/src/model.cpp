#include "cvnn/model.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace cvnn {

std::size_t ModelSpec::conv_blocks() const
{
    std::size_t n = 0;
    for (const auto& b : blocks)
        n += b.kind == BlockSpec::Kind::Conv;
    return n;
}

std::size_t ModelSpec::pool_layers() const
{
    return blocks.size() - conv_blocks();
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        out.push_back(cur);
    return out;
}

std::size_t parse_size(const std::string& s, const std::string& key)
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error("model spec: bad integer '" + s + "' for " + key);
    return v;
}

}  // namespace

std::string ModelSpec::to_text() const
{
    std::ostringstream os;
    os.precision(17);
    std::string blk;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blk += i ? "," : "";
        blk += blocks[i].kind == BlockSpec::Kind::Pool ? std::string("p") : "c" + std::to_string(blocks[i].channels);
    }
    os << "name=" << name << '\n'
       << "blocks=" << blk << '\n'
       << "fc=" << join_sizes(fc_widths) << '\n'
       << "num_classes=" << num_classes << '\n'
       << "in_channels=" << in_channels << '\n'
       << "input_size=" << input_size << '\n'
       << "width_multiplier=" << width_multiplier << '\n'
       << "activation=" << to_string(activation) << '\n'
       << "pool=" << to_string(pool) << '\n'
       << "readout=" << to_string(readout) << '\n'
       << "amplitude_only=" << (amplitude_only ? 1 : 0) << '\n';
    return os.str();
}

ModelSpec ModelSpec::from_text(const std::string& text)
{
    std::map<std::string, std::string> kv;
    for (const auto& line : split(text, '\n')) {
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("model spec: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw Error(std::string("model spec: missing key ") + key);
        return it->second;
    };
    ModelSpec spec;
    spec.name = get("name");
    for (const auto& tok : split(get("blocks"), ',')) {
        if (tok == "p")
            spec.blocks.push_back({BlockSpec::Kind::Pool, 0});
        else if (!tok.empty() && tok[0] == 'c')
            spec.blocks.push_back({BlockSpec::Kind::Conv, parse_size(tok.substr(1), "blocks")});
        else
            throw Error("model spec: bad block '" + tok + "'");
    }
    for (const auto& tok : split(get("fc"), ','))
        spec.fc_widths.push_back(parse_size(tok, "fc"));
    spec.num_classes = parse_size(get("num_classes"), "num_classes");
    spec.in_channels = parse_size(get("in_channels"), "in_channels");
    spec.input_size = parse_size(get("input_size"), "input_size");
    spec.width_multiplier = std::stod(get("width_multiplier"));
    spec.activation = parse_activation(get("activation"));
    spec.pool = parse_pool_variant(get("pool"));
    spec.readout = parse_readout(get("readout"));
    spec.amplitude_only = get("amplitude_only") == "1";
    return spec;
}

std::size_t scale_width(std::size_t channels, double multiplier)
{
    if (!(multiplier > 0))
        throw Error("width multiplier must be positive");
    // Tolerate representation error, e.g. 64 · 0.0625.
    const double scaled = std::ceil(double(channels) * multiplier - 1e-9);
    return std::max<std::size_t>(1, std::size_t(scaled));
}

namespace {

void check_input_size(std::size_t input_size, const char* who)
{
    if (input_size == 0 || input_size % 32 != 0)
        throw Error(std::string(who) + ": input size " + std::to_string(input_size) +
                    " must be a positive multiple of 32 (five 2x poolings)");
}

}  // namespace

ModelSpec cvggnet_spec(std::size_t num_classes, ActivationKind activation, PoolVariant pool, double width_multiplier,
                       std::size_t input_size)
{
    check_input_size(input_size, "build_cvggnet");
    if (num_classes < 1)
        throw Error("build_cvggnet: num_classes must be positive");
    ModelSpec spec;
    spec.name = "cvgg";
    std::size_t c = 0;
    for (std::size_t group : kCvggGroups) {
        for (std::size_t i = 0; i < group; ++i)
            spec.blocks.push_back({BlockSpec::Kind::Conv, scale_width(kCvggChannels[c++], width_multiplier)});
        spec.blocks.push_back({BlockSpec::Kind::Pool, 0});
    }
    const std::size_t hidden = scale_width(kCvggHidden, width_multiplier);
    spec.fc_widths = {hidden, hidden, num_classes};
    spec.num_classes = num_classes;
    spec.input_size = input_size;
    spec.width_multiplier = width_multiplier;
    spec.activation = activation;
    spec.pool = pool;
    return spec;
}

ModelSpec cvnet5_spec(std::size_t num_classes, ActivationKind activation, PoolVariant pool, double width_multiplier,
                      std::size_t input_size)
{
    check_input_size(input_size, "build_cvnet5");
    if (num_classes < 1)
        throw Error("build_cvnet5: num_classes must be positive");
    ModelSpec spec;
    spec.name = "cvnet5";
    for (std::size_t ch : kCvnet5Channels) {
        spec.blocks.push_back({BlockSpec::Kind::Conv, scale_width(ch, width_multiplier)});
        spec.blocks.push_back({BlockSpec::Kind::Pool, 0});
    }
    spec.fc_widths = {num_classes};
    spec.num_classes = num_classes;
    spec.input_size = input_size;
    spec.width_multiplier = width_multiplier;
    spec.activation = activation;
    spec.pool = pool;
    return spec;
}

// ---------------------------------------------------------------------------
// Modules

namespace {

// Real and imaginary parts independently N(0, 1/(2·fan_in)), so E|w|² = 1/fan_in.
template <typename T>
ComplexTensor<T> complex_gaussian(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    ComplexTensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / (2.0 * double(fan_in))));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.re()[i] = T(dist(rng));
        t.im()[i] = T(dist(rng));
    }
    return t;
}

}  // namespace

template <typename T>
ComplexConv2d<T>::ComplexConv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                                Conv2dOptions opts, bool with_bias, std::mt19937_64& rng)
    : kernel(complex_gaussian<T>(Shape{out_ch, in_ch, k, k}, in_ch * k * k, rng), true, name + ".kernel"),
      options(opts)
{
    if (with_bias)
        bias = Variable<T>(ComplexTensor<T>(Shape{out_ch}), true, name + ".bias");
}

template <typename T>
Variable<T> ComplexConv2d<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    return op::conv2d(tape, x, kernel, bias, options);
}

template <typename T>
void ComplexConv2d<T>::collect_parameters(std::vector<Variable<T>>& out)
{
    out.push_back(kernel);
    if (bias.defined())
        out.push_back(bias);
}

template <typename T>
ComplexBatchNorm<T>::ComplexBatchNorm(std::string name_, std::size_t channels)
    : state(channels), name(std::move(name_))
{
    ComplexTensor<T> gd(Shape{channels});
    gd.fill(T(1 / std::sqrt(2.0)), T(1 / std::sqrt(2.0)));
    gamma_diag = Variable<T>(std::move(gd), true, name + ".gamma");
    gamma_off = Variable<T>(ComplexTensor<T>(Shape{channels}), true, name + ".gamma_ri");
    gamma_off.set_frozen(false, true);
    beta = Variable<T>(ComplexTensor<T>(Shape{channels}), true, name + ".beta");
}

template <typename T>
Variable<T> ComplexBatchNorm<T>::forward(Tape<T>& tape, const Variable<T>& x, bool training)
{
    return op::batch_norm(tape, x, state, training, gamma_diag, gamma_off, beta);
}

template <typename T>
void ComplexBatchNorm<T>::collect_parameters(std::vector<Variable<T>>& out)
{
    out.push_back(gamma_diag);
    out.push_back(gamma_off);
    out.push_back(beta);
}

template <typename T>
void ComplexBatchNorm<T>::collect_buffers(std::vector<BufferRef<T>>& out)
{
    const std::size_t c = state.channels();
    out.push_back({name + ".running_mean.re", Shape{c}, state.running_mean.re()});
    out.push_back({name + ".running_mean.im", Shape{c}, state.running_mean.im()});
    out.push_back({name + ".running_cov", Shape{c, 3}, state.running_cov.data()});
}

template <typename T>
ComplexActivation<T>::ComplexActivation(std::string name, ActivationKind kind, std::size_t channels)
    : activation(kind)
{
    if (kind == ActivationKind::CPReLU) {
        ComplexTensor<T> s(Shape{channels});
        s.fill(T(kPreluInitialSlope), T(0));
        slope = Variable<T>(std::move(s), true, name + ".slope");
        slope.set_frozen(false, true);
    }
}

template <typename T>
Variable<T> ComplexActivation<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    return op::activate(tape, x, activation, slope);
}

template <typename T>
void ComplexActivation<T>::collect_parameters(std::vector<Variable<T>>& out)
{
    if (slope.defined())
        out.push_back(slope);
}

template <typename T>
Variable<T> ComplexMaxPool<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    return op::max_pool(tape, x, options);
}

template <typename T>
Variable<T> Flatten<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    const auto& s = x.shape();
    return op::reshape(tape, x, Shape{s.at(0), s.at(0) ? x.value().size() / s[0] : 0});
}

template <typename T>
ComplexLinear<T>::ComplexLinear(std::string name, std::size_t in_features, std::size_t out_features,
                                std::mt19937_64& rng)
    : weight(complex_gaussian<T>(Shape{out_features, in_features}, in_features, rng), true, name + ".weight"),
      bias(ComplexTensor<T>(Shape{out_features}), true, name + ".bias")
{
}

template <typename T>
Variable<T> ComplexLinear<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    return op::linear(tape, x, weight, bias);
}

template <typename T>
void ComplexLinear<T>::collect_parameters(std::vector<Variable<T>>& out)
{
    out.push_back(weight);
    out.push_back(bias);
}

template <typename T>
Variable<T> AmplitudeReadout<T>::forward(Tape<T>& tape, const Variable<T>& x, bool)
{
    return op::readout(tape, x, readout);
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec))
{
    if (spec_.num_classes < 1 || spec_.fc_widths.empty() || spec_.fc_widths.back() != spec_.num_classes)
        throw Error("model: last fully connected width must equal num_classes");
    std::mt19937_64 rng(seed);
    std::size_t channels = spec_.in_channels;
    std::size_t size = spec_.input_size;
    std::size_t conv_i = 0;
    for (const auto& b : spec_.blocks) {
        if (b.kind == BlockSpec::Kind::Conv) {
            const std::string name = "conv" + std::to_string(++conv_i);
            // The convolution bias is omitted: BN's β absorbs it exactly.
            layers_.push_back(std::make_unique<ComplexConv2d<T>>(name, channels, b.channels, 3,
                                                                 Conv2dOptions{1, 1}, false, rng));
            layers_.push_back(std::make_unique<ComplexBatchNorm<T>>(name + ".bn", b.channels));
            layers_.push_back(std::make_unique<ComplexActivation<T>>(name + ".act", spec_.activation, b.channels));
            channels = b.channels;
        } else {
            if (size < 2)
                throw Error("model: too many pooling layers for input size " + std::to_string(spec_.input_size));
            layers_.push_back(std::make_unique<ComplexMaxPool<T>>(PoolOptions{spec_.pool, 2, 2}));
            size /= 2;
        }
    }
    layers_.push_back(std::make_unique<Flatten<T>>());
    std::size_t features = channels * size * size;
    for (std::size_t i = 0; i < spec_.fc_widths.size(); ++i) {
        const std::string name = "fc" + std::to_string(i + 1);
        layers_.push_back(std::make_unique<ComplexLinear<T>>(name, features, spec_.fc_widths[i], rng));
        features = spec_.fc_widths[i];
        if (i + 1 < spec_.fc_widths.size())
            layers_.push_back(std::make_unique<ComplexActivation<T>>(name + ".act", spec_.activation, features));
    }
    layers_.push_back(std::make_unique<AmplitudeReadout<T>>(spec_.readout));
    for (auto& l : layers_)
        l->collect_parameters(params_);
    if (spec_.amplitude_only) {
        spec_.amplitude_only = false;
        make_amplitude_only();
    }
}

template <typename T>
ComplexTensor<T> Model<T>::prepare_input(const ComplexTensor<T>& batch) const
{
    const auto& s = batch.shape();
    if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.input_size || s[3] != spec_.input_size)
        throw ShapeError("model " + spec_.name + ": expected input [N," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.input_size) + "," + std::to_string(spec_.input_size) + "], got " +
                         to_string(s));
    if (!spec_.amplitude_only)
        return batch;
    ComplexTensor<T> out(s);
    auto mod = modulus(batch);
    std::copy(mod.data().begin(), mod.data().end(), out.re().begin());
    return out;
}

template <typename T>
Variable<T> Model<T>::forward(Tape<T>& tape, const ComplexTensor<T>& batch, bool training)
{
    Variable<T> x(prepare_input(batch));
    for (auto& l : layers_)
        x = l->forward(tape, x, training);
    return x;
}

template <typename T>
Variable<T> Model<T>::loss(Tape<T>& tape, const ComplexTensor<T>& batch, const std::vector<int>& labels,
                           bool training)
{
    return op::cross_entropy(tape, forward(tape, batch, training), labels);
}

template <typename T>
std::vector<int> Model<T>::predict(const ComplexTensor<T>& batch)
{
    Tape<T> tape(false);
    const auto logits = forward(tape, batch, false);
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.value().re().subspan(i * k, k);
        out[i] = int(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

template <typename T>
std::vector<BufferRef<T>> Model<T>::buffers()
{
    std::vector<BufferRef<T>> out;
    for (auto& l : layers_)
        l->collect_buffers(out);
    return out;
}

template <typename T>
std::size_t Model<T>::trainable_real_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_)
        n += p.value().size() * (std::size_t(!p.frozen_re()) + std::size_t(!p.frozen_im()));
    return n;
}

template <typename T>
LayerCensus Model<T>::census() const
{
    LayerCensus c;
    for (const auto& l : layers_) {
        const auto k = l->kind();
        c.conv_blocks += k == "conv";
        c.pools += k == "pool";
        c.fully_connected += k == "linear";
        c.amplitude += k == "amplitude";
    }
    c.softmax = 1;  // the cross-entropy head
    return c;
}

template <typename T>
void Model<T>::make_amplitude_only()
{
    if (spec_.amplitude_only)
        return;
    spec_.amplitude_only = true;
    for (auto& p : params_) {
        auto im = p.mutable_value().im();
        std::fill(im.begin(), im.end(), T(0));
        p.set_frozen(p.frozen_re(), true);
    }
    for (auto& l : layers_) {
        if (auto* bn = dynamic_cast<ComplexBatchNorm<T>*>(l.get())) {
            auto re = bn->gamma_off.mutable_value().re();
            std::fill(re.begin(), re.end(), T(0));
            bn->gamma_off.set_frozen(true, true);
        } else if (auto* pool = dynamic_cast<ComplexMaxPool<T>*>(l.get())) {
            pool->options.variant = PoolVariant::RealSplit;
        }
    }
}

template <typename T>
std::unique_ptr<Model<T>> build_cvggnet(std::size_t num_classes, ActivationKind activation, PoolVariant pool,
                                        double width_multiplier, std::size_t input_size, std::uint64_t seed)
{
    return std::make_unique<Model<T>>(cvggnet_spec(num_classes, activation, pool, width_multiplier, input_size), seed);
}

template <typename T>
std::unique_ptr<Model<T>> build_cvnet5(std::size_t num_classes, ActivationKind activation, PoolVariant pool,
                                       double width_multiplier, std::size_t input_size, std::uint64_t seed)
{
    return std::make_unique<Model<T>>(cvnet5_spec(num_classes, activation, pool, width_multiplier, input_size), seed);
}

template <typename T>
std::unique_ptr<Model<T>> amplitude_only_mode(Model<T>& model)
{
    ModelSpec spec = model.spec();
    spec.amplitude_only = false;
    auto twin = std::make_unique<Model<T>>(spec, 0);
    auto& src = model.parameters();
    auto& dst = twin->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].mutable_value() = src[i].value();
        dst[i].set_frozen(src[i].frozen_re(), src[i].frozen_im());
    }
    auto sb = model.buffers();
    auto db = twin->buffers();
    for (std::size_t i = 0; i < sb.size(); ++i)
        std::copy(sb[i].data.begin(), sb[i].data.end(), db[i].data.begin());
    twin->make_amplitude_only();
    return twin;
}

#define CVNN_INSTANTIATE(T)                                                                                   \
    template class ComplexConv2d<T>;                                                                          \
    template class ComplexBatchNorm<T>;                                                                       \
    template class ComplexActivation<T>;                                                                      \
    template class ComplexMaxPool<T>;                                                                         \
    template class Flatten<T>;                                                                                \
    template class ComplexLinear<T>;                                                                          \
    template class AmplitudeReadout<T>;                                                                       \
    template class Model<T>;                                                                                  \
    template std::unique_ptr<Model<T>> build_cvggnet<T>(std::size_t, ActivationKind, PoolVariant, double,     \
                                                        std::size_t, std::uint64_t);                          \
    template std::unique_ptr<Model<T>> build_cvnet5<T>(std::size_t, ActivationKind, PoolVariant, double,      \
                                                       std::size_t, std::uint64_t);                           \
    template std::unique_ptr<Model<T>> amplitude_only_mode<T>(Model<T>&);

CVNN_INSTANTIATE(float)
CVNN_INSTANTIATE(double)

#undef CVNN_INSTANTIATE

}  // namespace cvnn
