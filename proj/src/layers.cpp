#include "cvnn/layers.hpp"

#include "cvnn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cvnn {

const char* to_string(ActivationKind kind)
{
    switch (kind) {
    case ActivationKind::CReLU: return "crelu";
    case ActivationKind::CTanh: return "ctanh";
    case ActivationKind::CELU: return "celu";
    case ActivationKind::CPReLU: return "cprelu";
    }
    return "?";
}

const char* to_string(PoolVariant variant)
{
    switch (variant) {
    case PoolVariant::RealSplit: return "real-split";
    case PoolVariant::Amplitude: return "amplitude";
    case PoolVariant::Area: return "area";
    }
    return "?";
}

const char* to_string(Readout readout)
{
    switch (readout) {
    case Readout::Modulus: return "modulus";
    case Readout::RealPart: return "real";
    case Readout::SquaredModulus: return "squared-modulus";
    }
    return "?";
}

ActivationKind parse_activation(const std::string& name)
{
    for (auto k : {ActivationKind::CReLU, ActivationKind::CTanh, ActivationKind::CELU, ActivationKind::CPReLU})
        if (name == to_string(k))
            return k;
    throw Error("unknown activation '" + name + "' (expected crelu, ctanh, celu or cprelu)");
}

PoolVariant parse_pool_variant(const std::string& name)
{
    for (auto v : {PoolVariant::RealSplit, PoolVariant::Amplitude, PoolVariant::Area})
        if (name == to_string(v))
            return v;
    throw Error("unknown pooling '" + name + "' (expected real-split, amplitude or area)");
}

Readout parse_readout(const std::string& name)
{
    for (auto r : {Readout::Modulus, Readout::RealPart, Readout::SquaredModulus})
        if (name == to_string(r))
            return r;
    throw Error("unknown readout '" + name + "' (expected modulus, real or squared-modulus)");
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels)
    : running_mean(Shape{channels}), running_cov(Shape{channels, 3})
{
    // Identity covariance until the first training batch.
    for (std::size_t c = 0; c < channels; ++c) {
        running_cov[c * 3 + 0] = T(1);
        running_cov[c * 3 + 2] = T(1);
    }
}

template <typename T>
Whitening<T> inverse_sqrt_2x2(T vrr, T vri, T vii, T eps)
{
    const T a = vrr + eps;
    const T c = vii + eps;
    const T s = std::sqrt(a * c - vri * vri);
    const T t = std::sqrt(a + c + T(2) * s);
    const T q = T(1) / (s * t);
    return {q * (c + s), -q * vri, q * (a + s)};
}

namespace {

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
    std::size_t stride, pad;
    std::size_t k() const { return cin * kh * kw; }
    std::size_t p() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, const Conv2dOptions& o)
{
    if (in.size() != 4)
        throw ShapeError("complex_conv2d: input must be [N,C,H,W], got " + to_string(in));
    if (kernel.size() != 4)
        throw ShapeError("complex_conv2d: kernel must be [Cout,Cin,kh,kw], got " + to_string(kernel));
    if (in[1] != kernel[1])
        throw ShapeError("complex_conv2d: input has " + std::to_string(in[1]) + " channels, kernel expects " +
                         std::to_string(kernel[1]));
    if (o.stride == 0)
        throw ShapeError("complex_conv2d: stride must be positive");
    if (kernel[0] == 0 || kernel[1] == 0 || kernel[2] == 0 || kernel[3] == 0)
        throw ShapeError("complex_conv2d: empty kernel " + to_string(kernel));
    const std::size_t ph = in[2] + 2 * o.padding, pw = in[3] + 2 * o.padding;
    if (ph < kernel[2] || pw < kernel[3])
        throw ShapeError("complex_conv2d: kernel " + to_string(kernel) + " larger than padded input " +
                         std::to_string(ph) + "x" + std::to_string(pw));
    return {in[0],
            in[1],
            in[2],
            in[3],
            kernel[0],
            kernel[2],
            kernel[3],
            (ph - kernel[2]) / o.stride + 1,
            (pw - kernel[3]) / o.stride + 1,
            o.stride,
            o.padding};
}

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols)
{
    const std::size_t p = g.p();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    T* out = row + oy * g.ow;
                    if (iy < 0 || iy >= std::ptrdiff_t(g.h)) {
                        std::fill_n(out, g.ow, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.h + std::size_t(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                        out[ox] = (ix < 0 || ix >= std::ptrdiff_t(g.w)) ? T(0) : src[ix];
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img)
{
    const std::size_t p = g.p();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    if (iy < 0 || iy >= std::ptrdiff_t(g.h))
                        continue;
                    T* dst = img + (c * g.h + std::size_t(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                        if (ix >= 0 && ix < std::ptrdiff_t(g.w))
                            dst[ix] += row[oy * g.ow + ox];
                    }
                }
            }
}

template <typename T>
std::vector<T> negated(std::span<const T> x)
{
    std::vector<T> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [](T v) { return -v; });
    return out;
}

template <typename T>
ComplexTensor<T> conv_forward(const ComplexTensor<T>& input, const ComplexTensor<T>& kernel,
                              const ComplexTensor<T>* bias, const ConvGeometry& g)
{
    if (bias && bias->size() != g.cout)
        throw ShapeError("complex_conv2d: bias " + to_string(bias->shape()) + " does not match " +
                         std::to_string(g.cout) + " output channels");
    const auto& kern = kernels::active<T>();
    ComplexTensor<T> out(Shape{g.n, g.cout, g.oh, g.ow});
    const std::size_t k = g.k(), p = g.p();
    std::vector<T> cols_re(k * p), cols_im(k * p);
    const auto neg_b = negated(kernel.im());
    const T* a = kernel.re().data();
    const T* b = kernel.im().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        im2col(input.re().data() + n * g.cin * g.h * g.w, g, cols_re.data());
        im2col(input.im().data() + n * g.cin * g.h * g.w, g, cols_im.data());
        T* ore = out.re().data() + n * g.cout * p;
        T* oim = out.im().data() + n * g.cout * p;
        if (bias)
            for (std::size_t co = 0; co < g.cout; ++co) {
                std::fill_n(ore + co * p, p, bias->re()[co]);
                std::fill_n(oim + co * p, p, bias->im()[co]);
            }
        // Four real convolutions: re = A*x - B*y, im = A*y + B*x.
        kern.gemm_nn(g.cout, p, k, a, cols_re.data(), ore);
        kern.gemm_nn(g.cout, p, k, neg_b.data(), cols_im.data(), ore);
        kern.gemm_nn(g.cout, p, k, a, cols_im.data(), oim);
        kern.gemm_nn(g.cout, p, k, b, cols_re.data(), oim);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct ChannelLayout {
    std::size_t n, c, s;
};

ChannelLayout channel_layout(const Shape& shape, const char* what)
{
    if (shape.size() < 2)
        throw ShapeError(std::string(what) + ": expected [N,C,...], got " + to_string(shape));
    std::size_t s = 1;
    for (std::size_t i = 2; i < shape.size(); ++i)
        s *= shape[i];
    return {shape[0], shape[1], s};
}

template <typename T>
struct BatchNormCache {
    ComplexTensor<T> centered;
    ComplexTensor<T> whitened;
    std::vector<Whitening<T>> w;
    std::vector<T> a, b, c;  // V_rr + eps, V_ri, V_ii + eps per channel
    bool training = false;
};

template <typename T>
void check_channel_param(const ComplexTensor<T>* p, std::size_t channels, const char* what)
{
    if (p && p->size() != channels)
        throw ShapeError(std::string("complex_batchnorm: ") + what + " " + to_string(p->shape()) + " does not match " +
                         std::to_string(channels) + " channels");
}

template <typename T>
ComplexTensor<T> batchnorm_forward(const ComplexTensor<T>& x, BatchNormState<T>& state, bool training,
                                   const ComplexTensor<T>* gd, const ComplexTensor<T>* go,
                                   const ComplexTensor<T>* beta, BatchNormCache<T>* cache)
{
    const auto lay = channel_layout(x.shape(), "complex_batchnorm");
    if (state.channels() != lay.c)
        throw ShapeError("complex_batchnorm: state has " + std::to_string(state.channels()) + " channels, input " +
                         to_string(x.shape()));
    check_channel_param(gd, lay.c, "gamma");
    check_channel_param(go, lay.c, "gamma_off");
    check_channel_param(beta, lay.c, "beta");
    const std::size_t m = lay.n * lay.s;
    if (training && m < 2)
        throw ShapeError("complex_batchnorm: training needs at least 2 values per channel, input " +
                         to_string(x.shape()));

    ComplexTensor<T> out(x.shape());
    ComplexTensor<T> centered(x.shape());
    ComplexTensor<T> whitened(x.shape());
    std::vector<Whitening<T>> ws(lay.c);
    std::vector<T> as(lay.c), bs(lay.c), cs(lay.c);
    const T eps = state.epsilon;
    const T mom = state.momentum;

    for (std::size_t c = 0; c < lay.c; ++c) {
        T mr, mi, vrr, vri, vii;
        if (training) {
            double sr = 0, si = 0;
            for (std::size_t n = 0; n < lay.n; ++n) {
                const std::size_t base = (n * lay.c + c) * lay.s;
                for (std::size_t s = 0; s < lay.s; ++s) {
                    sr += x.re()[base + s];
                    si += x.im()[base + s];
                }
            }
            mr = T(sr / double(m));
            mi = T(si / double(m));
            double srr = 0, sri = 0, sii = 0;
            for (std::size_t n = 0; n < lay.n; ++n) {
                const std::size_t base = (n * lay.c + c) * lay.s;
                for (std::size_t s = 0; s < lay.s; ++s) {
                    const double dr = double(x.re()[base + s] - mr);
                    const double di = double(x.im()[base + s] - mi);
                    srr += dr * dr;
                    sri += dr * di;
                    sii += di * di;
                }
            }
            vrr = T(srr / double(m));
            vri = T(sri / double(m));
            vii = T(sii / double(m));
            auto& rm = state.running_mean;
            auto& rc = state.running_cov;
            rm.re()[c] = (T(1) - mom) * rm.re()[c] + mom * mr;
            rm.im()[c] = (T(1) - mom) * rm.im()[c] + mom * mi;
            rc[c * 3 + 0] = (T(1) - mom) * rc[c * 3 + 0] + mom * vrr;
            rc[c * 3 + 1] = (T(1) - mom) * rc[c * 3 + 1] + mom * vri;
            rc[c * 3 + 2] = (T(1) - mom) * rc[c * 3 + 2] + mom * vii;
        } else {
            mr = state.running_mean.re()[c];
            mi = state.running_mean.im()[c];
            vrr = state.running_cov[c * 3 + 0];
            vri = state.running_cov[c * 3 + 1];
            vii = state.running_cov[c * 3 + 2];
        }
        const auto w = inverse_sqrt_2x2(vrr, vri, vii, eps);
        ws[c] = w;
        as[c] = vrr + eps;
        bs[c] = vri;
        cs[c] = vii + eps;
        const T grr = gd ? gd->re()[c] : T(1);
        const T gii = gd ? gd->im()[c] : T(1);
        const T gri = go ? go->re()[c] : T(0);
        const T br = beta ? beta->re()[c] : T(0);
        const T bi = beta ? beta->im()[c] : T(0);
        for (std::size_t n = 0; n < lay.n; ++n) {
            const std::size_t base = (n * lay.c + c) * lay.s;
            for (std::size_t s = 0; s < lay.s; ++s) {
                const std::size_t i = base + s;
                const T dr = x.re()[i] - mr;
                const T di = x.im()[i] - mi;
                const T xr = w.w11 * dr + w.w12 * di;
                const T xi = w.w12 * dr + w.w22 * di;
                centered.re()[i] = dr;
                centered.im()[i] = di;
                whitened.re()[i] = xr;
                whitened.im()[i] = xi;
                out.re()[i] = grr * xr + gri * xi + br;
                out.im()[i] = gri * xr + gii * xi + bi;
            }
        }
    }
    if (cache) {
        cache->centered = std::move(centered);
        cache->whitened = std::move(whitened);
        cache->w = std::move(ws);
        cache->a = std::move(as);
        cache->b = std::move(bs);
        cache->c = std::move(cs);
        cache->training = training;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
T apply_scalar(ActivationKind kind, T x, T slope)
{
    switch (kind) {
    case ActivationKind::CReLU: return x >= T(0) ? x : T(0);
    case ActivationKind::CTanh: return std::tanh(x);
    case ActivationKind::CELU: return x >= T(0) ? x : T(kEluAlpha) * std::expm1(x);
    case ActivationKind::CPReLU: return x >= T(0) ? x : slope * x;
    }
    return x;
}

// Derivative; at a kink the right-hand derivative.
template <typename T>
T derivative_scalar(ActivationKind kind, T x, T slope)
{
    switch (kind) {
    case ActivationKind::CReLU: return x >= T(0) ? T(1) : T(0);
    case ActivationKind::CTanh: {
        const T t = std::tanh(x);
        return T(1) - t * t;
    }
    case ActivationKind::CELU: return x >= T(0) ? T(1) : T(kEluAlpha) * std::exp(x);
    case ActivationKind::CPReLU: return x >= T(0) ? T(1) : slope;
    }
    return T(1);
}

template <typename T>
ComplexTensor<T> activation_forward(const ComplexTensor<T>& input, ActivationKind kind, const ComplexTensor<T>* slope)
{
    ComplexTensor<T> out(input.shape());
    if (kind == ActivationKind::CPReLU) {
        const auto lay = channel_layout(input.shape(), "activation");
        if (!slope || slope->size() != lay.c)
            throw ShapeError("activation: CPReLU needs one slope per channel for input " + to_string(input.shape()));
        for (std::size_t n = 0; n < lay.n; ++n)
            for (std::size_t c = 0; c < lay.c; ++c) {
                const T a = slope->re()[c];
                const std::size_t base = (n * lay.c + c) * lay.s;
                for (std::size_t s = 0; s < lay.s; ++s) {
                    out.re()[base + s] = apply_scalar(kind, input.re()[base + s], a);
                    out.im()[base + s] = apply_scalar(kind, input.im()[base + s], a);
                }
            }
        return out;
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
        out.re()[i] = apply_scalar(kind, input.re()[i], T(0));
        out.im()[i] = apply_scalar(kind, input.im()[i], T(0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
PoolResult<T> maxpool_forward(const ComplexTensor<T>& input, const PoolOptions& o)
{
    const auto& sh = input.shape();
    if (sh.size() != 4)
        throw ShapeError("complex_maxpool: input must be [N,C,H,W], got " + to_string(sh));
    if (o.window == 0 || o.stride == 0)
        throw ShapeError("complex_maxpool: window and stride must be positive");
    if (sh[2] < o.window || sh[3] < o.window)
        throw ShapeError("complex_maxpool: window " + std::to_string(o.window) + " exceeds input " + to_string(sh));
    const std::size_t planes = sh[0] * sh[1], h = sh[2], w = sh[3];
    const std::size_t oh = (h - o.window) / o.stride + 1, ow = (w - o.window) / o.stride + 1;
    PoolResult<T> r;
    r.output = ComplexTensor<T>(Shape{sh[0], sh[1], oh, ow});
    r.index_re.resize(planes * oh * ow);
    r.index_im.resize(planes * oh * ow);
    const auto re = input.re();
    const auto im = input.im();
    auto score = [&](std::size_t i) -> T {
        if (o.variant == PoolVariant::Amplitude)
            return std::sqrt(re[i] * re[i] + im[i] * im[i]);
        return std::abs(re[i] * im[i]);
    };
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t o_idx = (p * oh + oy) * ow + ox;
                const std::size_t first = (p * h + oy * o.stride) * w + ox * o.stride;
                std::size_t best_re = first, best_im = first;
                if (o.variant == PoolVariant::RealSplit) {
                    for (std::size_t ky = 0; ky < o.window; ++ky)
                        for (std::size_t kx = 0; kx < o.window; ++kx) {
                            const std::size_t i = first + ky * w + kx;
                            if (re[i] > re[best_re])
                                best_re = i;
                            if (im[i] > im[best_im])
                                best_im = i;
                        }
                } else {
                    T best = score(first);
                    for (std::size_t ky = 0; ky < o.window; ++ky)
                        for (std::size_t kx = 0; kx < o.window; ++kx) {
                            const std::size_t i = first + ky * w + kx;
                            const T sc = score(i);
                            if (sc > best) {
                                best = sc;
                                best_re = i;
                            }
                        }
                    best_im = best_re;
                }
                r.index_re[o_idx] = best_re;
                r.index_im[o_idx] = best_im;
                r.output.re()[o_idx] = re[best_re];
                r.output.im()[o_idx] = im[best_im];
            }
    return r;
}

// ---------------------------------------------------------------------------
// Fully connected

struct LinearGeometry {
    std::size_t n, f, out;
};

LinearGeometry linear_geometry(const Shape& in, const Shape& weight)
{
    if (in.size() != 2)
        throw ShapeError("complex_linear: input must be [N,F], got " + to_string(in));
    if (weight.size() != 2)
        throw ShapeError("complex_linear: weight must be [out,F], got " + to_string(weight));
    if (in[1] != weight[1])
        throw ShapeError("complex_linear: input features " + std::to_string(in[1]) + " vs weight " +
                         to_string(weight));
    return {in[0], in[1], weight[0]};
}

template <typename T>
ComplexTensor<T> linear_forward(const ComplexTensor<T>& x, const ComplexTensor<T>& wt, const ComplexTensor<T>* bias,
                                const LinearGeometry& g)
{
    if (bias && bias->size() != g.out)
        throw ShapeError("complex_linear: bias " + to_string(bias->shape()) + " vs " + std::to_string(g.out) +
                         " outputs");
    const auto& kern = kernels::active<T>();
    ComplexTensor<T> out(Shape{g.n, g.out});
    if (bias)
        for (std::size_t n = 0; n < g.n; ++n) {
            std::copy(bias->re().begin(), bias->re().end(), out.re().begin() + n * g.out);
            std::copy(bias->im().begin(), bias->im().end(), out.im().begin() + n * g.out);
        }
    const auto neg_b = negated(wt.im());
    kern.gemm_nt(g.n, g.out, g.f, x.re().data(), wt.re().data(), out.re().data());
    kern.gemm_nt(g.n, g.out, g.f, x.im().data(), neg_b.data(), out.re().data());
    kern.gemm_nt(g.n, g.out, g.f, x.im().data(), wt.re().data(), out.im().data());
    kern.gemm_nt(g.n, g.out, g.f, x.re().data(), wt.im().data(), out.im().data());
    return out;
}

template <typename T>
void check_labels(const Shape& logits, std::span<const int> labels)
{
    if (logits.size() != 2)
        throw ShapeError("softmax_cross_entropy: logits must be [N,K], got " + to_string(logits));
    if (labels.size() != logits[0])
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         to_string(logits));
    for (int l : labels)
        if (l < 0 || std::size_t(l) >= logits[1])
            throw Error("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                        std::to_string(logits[1]) + ")");
}

// Row-wise log-sum-exp with max subtraction.
template <typename T>
std::vector<T> log_sum_exp(std::span<const T> z, std::size_t n, std::size_t k)
{
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = z.data() + i * k;
        const T mx = *std::max_element(row, row + k);
        T acc = 0;
        for (std::size_t j = 0; j < k; ++j)
            acc += std::exp(row[j] - mx);
        out[i] = mx + std::log(acc);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor-level API

template <typename T>
ComplexTensor<T> complex_conv2d(const ComplexTensor<T>& input, const ComplexTensor<T>& kernel,
                                const ComplexTensor<T>* bias, const Conv2dOptions& options)
{
    const auto g = conv_geometry<T>(input.shape(), kernel.shape(), options);
    return conv_forward(input, kernel, bias, g);
}

template <typename T>
ComplexTensor<T> complex_batchnorm(const ComplexTensor<T>& input, BatchNormState<T>& state, bool training,
                                   const ComplexTensor<T>* gamma_diag, const ComplexTensor<T>* gamma_off,
                                   const ComplexTensor<T>* beta)
{
    return batchnorm_forward(input, state, training, gamma_diag, gamma_off, beta, static_cast<BatchNormCache<T>*>(nullptr));
}

template <typename T>
ComplexTensor<T> activation(const ComplexTensor<T>& input, ActivationKind kind, const ComplexTensor<T>* prelu_slope)
{
    return activation_forward(input, kind, prelu_slope);
}

template <typename T>
PoolResult<T> complex_maxpool(const ComplexTensor<T>& input, const PoolOptions& options)
{
    return maxpool_forward(input, options);
}

template <typename T>
ComplexTensor<T> complex_linear(const ComplexTensor<T>& input, const ComplexTensor<T>& weight,
                                const ComplexTensor<T>* bias)
{
    return linear_forward(input, weight, bias, linear_geometry(input.shape(), weight.shape()));
}

template <typename T>
RealTensor<T> amplitude_layer(const ComplexTensor<T>& input)
{
    return modulus(input);
}

template <typename T>
T softmax_cross_entropy(const RealTensor<T>& logits, std::span<const int> labels)
{
    check_labels<T>(logits.shape(), labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (n == 0)
        throw ShapeError("softmax_cross_entropy: empty batch");
    const auto lse = log_sum_exp(logits.data(), n, k);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i)
        loss += lse[i] - logits[i * k + std::size_t(labels[i])];
    return loss / T(n);
}

template <typename T>
RealTensor<T> softmax(const RealTensor<T>& logits)
{
    if (logits.shape().size() != 2)
        throw ShapeError("softmax: logits must be [N,K], got " + to_string(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const auto lse = log_sum_exp(logits.data(), n, k);
    RealTensor<T> out(logits.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
            out[i * k + j] = std::exp(logits[i * k + j] - lse[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops

namespace op {

template <typename T>
using Grads = std::span<ComplexTensor<T>* const>;

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b)
{
    return tape.record("add", cvnn::add(a.value(), b.value()), {a, b}, [](const ComplexTensor<T>& g, Grads<T> gin) {
        auto& k = kernels::active<T>();
        for (auto* gi : gin)
            if (gi) {
                k.axpy(g.size(), T(1), g.re().data(), gi->re().data());
                k.axpy(g.size(), T(1), g.im().data(), gi->im().data());
            }
    });
}

template <typename T>
Variable<T> mul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b)
{
    auto da = a.data(), db = b.data();
    return tape.record("mul", cvnn::mul(a.value(), b.value()), {a, b},
                       [da, db](const ComplexTensor<T>& g, Grads<T> gin) {
                           // d/d(a.re), d/d(a.im) of <g, a·b> is g·conj(b) in real-pair form.
                           auto route = [&g](const ComplexTensor<T>& other, ComplexTensor<T>& out) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   const T gr = g.re()[i], gi = g.im()[i];
                                   const T br = other.re()[i], bi = other.im()[i];
                                   out.re()[i] += gr * br + gi * bi;
                                   out.im()[i] += -gr * bi + gi * br;
                               }
                           };
                           if (gin[0])
                               route(db->value, *gin[0]);
                           if (gin[1])
                               route(da->value, *gin[1]);
                       });
}

template <typename T>
Variable<T> sum_real(Tape<T>& tape, const Variable<T>& x)
{
    ComplexTensor<T> out(Shape{1});
    out.re()[0] = kernels::active<T>().sum(x.value().size(), x.value().re().data());
    return tape.record("sum_real", std::move(out), {x}, [](const ComplexTensor<T>& g, Grads<T> gin) {
        if (!gin[0])
            return;
        for (auto& v : gin[0]->re())
            v += g.re()[0];
    });
}

template <typename T>
Variable<T> sum_abs2(Tape<T>& tape, const Variable<T>& x)
{
    const auto& v = x.value();
    auto& k = kernels::active<T>();
    ComplexTensor<T> out(Shape{1});
    out.re()[0] = k.dot(v.size(), v.re().data(), v.re().data()) + k.dot(v.size(), v.im().data(), v.im().data());
    auto dx = x.data();
    return tape.record("sum_abs2", std::move(out), {x}, [dx](const ComplexTensor<T>& g, Grads<T> gin) {
        if (!gin[0])
            return;
        auto& k = kernels::active<T>();
        const T s = T(2) * g.re()[0];
        k.axpy(dx->value.size(), s, dx->value.re().data(), gin[0]->re().data());
        k.axpy(dx->value.size(), s, dx->value.im().data(), gin[0]->im().data());
    });
}

template <typename T>
Variable<T> inner(Tape<T>& tape, const Variable<T>& x, const ComplexTensor<T>& w)
{
    require_same_shape(x.shape(), w.shape(), "inner");
    auto& k = kernels::active<T>();
    ComplexTensor<T> out(Shape{1});
    out.re()[0] = k.dot(w.size(), w.re().data(), x.value().re().data()) +
                  k.dot(w.size(), w.im().data(), x.value().im().data());
    return tape.record("inner", std::move(out), {x}, [w](const ComplexTensor<T>& g, Grads<T> gin) {
        if (!gin[0])
            return;
        auto& k = kernels::active<T>();
        k.axpy(w.size(), g.re()[0], w.re().data(), gin[0]->re().data());
        k.axpy(w.size(), g.re()[0], w.im().data(), gin[0]->im().data());
    });
}

template <typename T>
Variable<T> reshape(Tape<T>& tape, const Variable<T>& x, Shape shape)
{
    return tape.record("reshape", x.value().reshaped(std::move(shape)), {x},
                       [](const ComplexTensor<T>& g, Grads<T> gin) {
                           if (!gin[0])
                               return;
                           auto& k = kernels::active<T>();
                           k.axpy(g.size(), T(1), g.re().data(), gin[0]->re().data());
                           k.axpy(g.size(), T(1), g.im().data(), gin[0]->im().data());
                       });
}

template <typename T>
Variable<T> conv2d(Tape<T>& tape, const Variable<T>& input, const Variable<T>& kernel, const Variable<T>& bias,
                   const Conv2dOptions& options)
{
    const auto g = conv_geometry<T>(input.shape(), kernel.shape(), options);
    auto out = conv_forward(input.value(), kernel.value(), bias.defined() ? &bias.value() : nullptr, g);
    auto din = input.data(), dk = kernel.data();
    return tape.record(
        "complex_conv2d", std::move(out), {input, kernel, bias},
        [din, dk, g](const ComplexTensor<T>& grad, Grads<T> gin) {
            auto& kern = kernels::active<T>();
            const std::size_t k = g.k(), p = g.p(), img = g.cin * g.h * g.w;
            const auto& x = din->value;
            const auto& w = dk->value;
            const auto neg_b = negated(w.im());
            std::vector<T> cols_re(k * p), cols_im(k * p), dcols_re(k * p), dcols_im(k * p), neg_gr(g.cout * p);
            for (std::size_t n = 0; n < g.n; ++n) {
                const T* gr = grad.re().data() + n * g.cout * p;
                const T* gi = grad.im().data() + n * g.cout * p;
                std::transform(gr, gr + g.cout * p, neg_gr.begin(), [](T v) { return -v; });
                if (gin[1]) {
                    im2col(x.re().data() + n * img, g, cols_re.data());
                    im2col(x.im().data() + n * img, g, cols_im.data());
                    // dA += gr·Xᵀ + gi·Yᵀ ; dB += gi·Xᵀ - gr·Yᵀ
                    T* da = gin[1]->re().data();
                    T* db = gin[1]->im().data();
                    kern.gemm_nt(g.cout, k, p, gr, cols_re.data(), da);
                    kern.gemm_nt(g.cout, k, p, gi, cols_im.data(), da);
                    kern.gemm_nt(g.cout, k, p, gi, cols_re.data(), db);
                    kern.gemm_nt(g.cout, k, p, neg_gr.data(), cols_im.data(), db);
                }
                if (gin[0]) {
                    // dX = Aᵀ·gr + Bᵀ·gi ; dY = Aᵀ·gi - Bᵀ·gr
                    std::fill(dcols_re.begin(), dcols_re.end(), T(0));
                    std::fill(dcols_im.begin(), dcols_im.end(), T(0));
                    kern.gemm_tn(k, p, g.cout, w.re().data(), gr, dcols_re.data());
                    kern.gemm_tn(k, p, g.cout, w.im().data(), gi, dcols_re.data());
                    kern.gemm_tn(k, p, g.cout, w.re().data(), gi, dcols_im.data());
                    kern.gemm_tn(k, p, g.cout, neg_b.data(), gr, dcols_im.data());
                    col2im(dcols_re.data(), g, gin[0]->re().data() + n * img);
                    col2im(dcols_im.data(), g, gin[0]->im().data() + n * img);
                }
                if (gin[2])
                    for (std::size_t co = 0; co < g.cout; ++co) {
                        gin[2]->re()[co] += kern.sum(p, gr + co * p);
                        gin[2]->im()[co] += kern.sum(p, gi + co * p);
                    }
            }
        });
}

template <typename T>
Variable<T> batch_norm(Tape<T>& tape, const Variable<T>& input, BatchNormState<T>& state, bool training,
                       const Variable<T>& gamma_diag, const Variable<T>& gamma_off, const Variable<T>& beta)
{
    auto cache = std::make_shared<BatchNormCache<T>>();
    auto out = batchnorm_forward(input.value(), state, training, gamma_diag.defined() ? &gamma_diag.value() : nullptr,
                                 gamma_off.defined() ? &gamma_off.value() : nullptr,
                                 beta.defined() ? &beta.value() : nullptr, tape.recording() ? cache.get() : nullptr);
    const auto lay = channel_layout(input.shape(), "complex_batchnorm");
    auto dgd = gamma_diag.data(), dgo = gamma_off.data();
    return tape.record(
        "complex_batchnorm", std::move(out), {input, gamma_diag, gamma_off, beta},
        [cache, lay, dgd, dgo](const ComplexTensor<T>& g, Grads<T> gin) {
            const auto& d = cache->centered;
            const auto& xh = cache->whitened;
            const double m = double(lay.n * lay.s);
            std::vector<T> gxr(lay.n * lay.s), gxi(lay.n * lay.s);
            for (std::size_t c = 0; c < lay.c; ++c) {
                const T grr = dgd ? dgd->value.re()[c] : T(1);
                const T gii = dgd ? dgd->value.im()[c] : T(1);
                const T gri = dgo ? dgo->value.re()[c] : T(0);
                double sbr = 0, sbi = 0, sgrr = 0, sgii = 0, sgri = 0;
                double g11 = 0, g12 = 0, g22 = 0;
                std::size_t j = 0;
                for (std::size_t n = 0; n < lay.n; ++n) {
                    const std::size_t base = (n * lay.c + c) * lay.s;
                    for (std::size_t s = 0; s < lay.s; ++s, ++j) {
                        const std::size_t i = base + s;
                        const T yr = g.re()[i], yi = g.im()[i];
                        sbr += yr;
                        sbi += yi;
                        sgrr += double(yr) * xh.re()[i];
                        sgii += double(yi) * xh.im()[i];
                        sgri += double(yr) * xh.im()[i] + double(yi) * xh.re()[i];
                        const T hr = grr * yr + gri * yi;
                        const T hi = gri * yr + gii * yi;
                        gxr[j] = hr;
                        gxi[j] = hi;
                        g11 += double(hr) * d.re()[i];
                        g12 += double(hr) * d.im()[i] + double(hi) * d.re()[i];
                        g22 += double(hi) * d.im()[i];
                    }
                }
                if (gin[3]) {
                    gin[3]->re()[c] += T(sbr);
                    gin[3]->im()[c] += T(sbi);
                }
                if (gin[1]) {
                    gin[1]->re()[c] += T(sgrr);
                    gin[1]->im()[c] += T(sgii);
                }
                if (gin[2])
                    gin[2]->re()[c] += T(sgri);
                if (!gin[0])
                    continue;
                const auto w = cache->w[c];
                double la = 0, lb = 0, lc = 0;
                if (cache->training) {
                    // Chain rule through W = V^{-1/2}(a, b, c) in closed form.
                    const double a = cache->a[c], b = cache->b[c], cc = cache->c[c];
                    const double s = std::sqrt(a * cc - b * b);
                    const double t = std::sqrt(a + cc + 2 * s);
                    const double q = 1 / (s * t);
                    const double lq = g11 * (cc + s) - g12 * b + g22 * (a + s);
                    const double lt = -lq * q / t;
                    const double ls = q * (g11 + g22) - lq * q / s + lt / t;
                    la = q * g22 + lt / (2 * t) + ls * cc / (2 * s);
                    lc = q * g11 + lt / (2 * t) + ls * a / (2 * s);
                    lb = -q * g12 - ls * b / s;
                }
                std::vector<double> gdr(lay.n * lay.s), gdi(lay.n * lay.s);
                double mean_r = 0, mean_i = 0;
                j = 0;
                for (std::size_t n = 0; n < lay.n; ++n) {
                    const std::size_t base = (n * lay.c + c) * lay.s;
                    for (std::size_t s = 0; s < lay.s; ++s, ++j) {
                        const std::size_t i = base + s;
                        double r = double(w.w11) * gxr[j] + double(w.w12) * gxi[j];
                        double im = double(w.w12) * gxr[j] + double(w.w22) * gxi[j];
                        if (cache->training) {
                            r += (2 * la * d.re()[i] + lb * d.im()[i]) / m;
                            im += (2 * lc * d.im()[i] + lb * d.re()[i]) / m;
                        }
                        gdr[j] = r;
                        gdi[j] = im;
                        mean_r += r;
                        mean_i += im;
                    }
                }
                if (cache->training) {
                    mean_r /= m;
                    mean_i /= m;
                } else {
                    mean_r = mean_i = 0;
                }
                j = 0;
                for (std::size_t n = 0; n < lay.n; ++n) {
                    const std::size_t base = (n * lay.c + c) * lay.s;
                    for (std::size_t s = 0; s < lay.s; ++s, ++j) {
                        gin[0]->re()[base + s] += T(gdr[j] - mean_r);
                        gin[0]->im()[base + s] += T(gdi[j] - mean_i);
                    }
                }
            }
        });
}

template <typename T>
Variable<T> activate(Tape<T>& tape, const Variable<T>& input, ActivationKind kind, const Variable<T>& prelu_slope)
{
    auto out = activation_forward(input.value(), kind, prelu_slope.defined() ? &prelu_slope.value() : nullptr);
    if (tape.track_decisions() && kind != ActivationKind::CTanh) {
        const auto& x = input.value();
        std::uint64_t word = 0;
        std::size_t bits = 0;
        auto push = [&](bool b) {
            word = (word << 1) | std::uint64_t(b);
            if (++bits == 64) {
                tape.note_decision(word);
                word = 0;
                bits = 0;
            }
        };
        for (std::size_t i = 0; i < x.size(); ++i) {
            push(x.re()[i] >= T(0));
            push(x.im()[i] >= T(0));
        }
        tape.note_decision(word ^ (std::uint64_t(bits) << 56));
    }
    auto din = input.data(), ds = prelu_slope.data();
    return tape.record(std::string("activation:") + to_string(kind), std::move(out), {input, prelu_slope},
                       [din, ds, kind](const ComplexTensor<T>& g, Grads<T> gin) {
                           const auto& x = din->value;
                           const bool prelu = kind == ActivationKind::CPReLU;
                           const auto lay = prelu ? channel_layout(x.shape(), "activation")
                                                  : ChannelLayout{1, 1, x.size()};
                           for (std::size_t n = 0; n < lay.n; ++n)
                               for (std::size_t c = 0; c < lay.c; ++c) {
                                   const T a = prelu ? ds->value.re()[c] : T(0);
                                   const std::size_t base = (n * lay.c + c) * lay.s;
                                   T da = 0;
                                   for (std::size_t s = 0; s < lay.s; ++s) {
                                       const std::size_t i = base + s;
                                       const T xr = x.re()[i], xi = x.im()[i];
                                       if (gin[0]) {
                                           gin[0]->re()[i] += g.re()[i] * derivative_scalar(kind, xr, a);
                                           gin[0]->im()[i] += g.im()[i] * derivative_scalar(kind, xi, a);
                                       }
                                       if (prelu) {
                                           if (xr < T(0))
                                               da += g.re()[i] * xr;
                                           if (xi < T(0))
                                               da += g.im()[i] * xi;
                                       }
                                   }
                                   if (prelu && gin[1])
                                       gin[1]->re()[c] += da;
                               }
                       });
}

template <typename T>
Variable<T> max_pool(Tape<T>& tape, const Variable<T>& input, const PoolOptions& options)
{
    auto r = maxpool_forward(input.value(), options);
    if (tape.track_decisions()) {
        for (std::size_t i = 0; i < r.index_re.size(); ++i)
            tape.note_decision((std::uint64_t(r.index_re[i]) << 32) ^ std::uint64_t(r.index_im[i]));
    }
    auto idx = std::make_shared<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>(
        std::move(r.index_re), std::move(r.index_im));
    return tape.record(std::string("complex_maxpool:") + to_string(options.variant), std::move(r.output), {input},
                       [idx](const ComplexTensor<T>& g, Grads<T> gin) {
                           if (!gin[0])
                               return;
                           for (std::size_t o = 0; o < g.size(); ++o) {
                               gin[0]->re()[idx->first[o]] += g.re()[o];
                               gin[0]->im()[idx->second[o]] += g.im()[o];
                           }
                       });
}

template <typename T>
Variable<T> linear(Tape<T>& tape, const Variable<T>& input, const Variable<T>& weight, const Variable<T>& bias)
{
    const auto geo = linear_geometry(input.shape(), weight.shape());
    auto out = linear_forward(input.value(), weight.value(), bias.defined() ? &bias.value() : nullptr, geo);
    auto din = input.data(), dw = weight.data();
    return tape.record("complex_linear", std::move(out), {input, weight, bias},
                       [din, dw, geo](const ComplexTensor<T>& g, Grads<T> gin) {
                           auto& kern = kernels::active<T>();
                           const auto& x = din->value;
                           const auto& w = dw->value;
                           const auto neg_gr = negated(g.re());
                           if (gin[1]) {
                               // dA += grᵀ·xr + giᵀ·xi ; dB += giᵀ·xr - grᵀ·xi
                               T* da = gin[1]->re().data();
                               T* db = gin[1]->im().data();
                               kern.gemm_tn(geo.out, geo.f, geo.n, g.re().data(), x.re().data(), da);
                               kern.gemm_tn(geo.out, geo.f, geo.n, g.im().data(), x.im().data(), da);
                               kern.gemm_tn(geo.out, geo.f, geo.n, g.im().data(), x.re().data(), db);
                               kern.gemm_tn(geo.out, geo.f, geo.n, neg_gr.data(), x.im().data(), db);
                           }
                           if (gin[0]) {
                               // dxr = gr·A + gi·B ; dxi = gi·A - gr·B
                               T* dxr = gin[0]->re().data();
                               T* dxi = gin[0]->im().data();
                               kern.gemm_nn(geo.n, geo.f, geo.out, g.re().data(), w.re().data(), dxr);
                               kern.gemm_nn(geo.n, geo.f, geo.out, g.im().data(), w.im().data(), dxr);
                               kern.gemm_nn(geo.n, geo.f, geo.out, g.im().data(), w.re().data(), dxi);
                               kern.gemm_nn(geo.n, geo.f, geo.out, neg_gr.data(), w.im().data(), dxi);
                           }
                           if (gin[2])
                               for (std::size_t n = 0; n < geo.n; ++n)
                                   for (std::size_t o = 0; o < geo.out; ++o) {
                                       gin[2]->re()[o] += g.re()[n * geo.out + o];
                                       gin[2]->im()[o] += g.im()[n * geo.out + o];
                                   }
                       });
}

template <typename T>
Variable<T> readout(Tape<T>& tape, const Variable<T>& input, Readout kind)
{
    const auto& x = input.value();
    ComplexTensor<T> out(x.shape());
    switch (kind) {
    case Readout::Modulus: {
        auto mod = modulus(x);
        std::copy(mod.data().begin(), mod.data().end(), out.re().begin());
        break;
    }
    case Readout::RealPart: std::copy(x.re().begin(), x.re().end(), out.re().begin()); break;
    case Readout::SquaredModulus:
        for (std::size_t i = 0; i < x.size(); ++i)
            out.re()[i] = x.re()[i] * x.re()[i] + x.im()[i] * x.im()[i];
        break;
    }
    auto din = input.data();
    std::vector<T> mod(out.re().begin(), out.re().end());
    return tape.record(std::string("readout:") + to_string(kind), std::move(out), {input},
                       [din, kind, mod = std::move(mod)](const ComplexTensor<T>& g, Grads<T> gin) {
                           if (!gin[0])
                               return;
                           const auto& x = din->value;
                           for (std::size_t i = 0; i < x.size(); ++i) {
                               const T gr = g.re()[i];
                               switch (kind) {
                               case Readout::Modulus:
                                   // d|z| = (re, im)/|z|; zero at the origin.
                                   if (mod[i] > T(0)) {
                                       gin[0]->re()[i] += gr * x.re()[i] / mod[i];
                                       gin[0]->im()[i] += gr * x.im()[i] / mod[i];
                                   }
                                   break;
                               case Readout::RealPart: gin[0]->re()[i] += gr; break;
                               case Readout::SquaredModulus:
                                   gin[0]->re()[i] += T(2) * gr * x.re()[i];
                                   gin[0]->im()[i] += T(2) * gr * x.im()[i];
                                   break;
                               }
                           }
                       });
}

template <typename T>
Variable<T> cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::vector<int> labels)
{
    const auto& z = logits.value();
    check_labels<T>(z.shape(), labels);
    const std::size_t n = z.dim(0), k = z.dim(1);
    if (n == 0)
        throw ShapeError("cross_entropy: empty batch");
    const auto lse = log_sum_exp<T>(z.re(), n, k);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i)
        loss += lse[i] - z.re()[i * k + std::size_t(labels[i])];
    ComplexTensor<T> out(Shape{1});
    out.re()[0] = loss / T(n);
    auto dz = logits.data();
    return tape.record("softmax_cross_entropy", std::move(out), {logits},
                       [dz, lse, labels = std::move(labels), n, k](const ComplexTensor<T>& g, Grads<T> gin) {
                           if (!gin[0])
                               return;
                           const T scale = g.re()[0] / T(n);
                           const auto& z = dz->value;
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < k; ++j) {
                                   T p = std::exp(z.re()[i * k + j] - lse[i]);
                                   if (std::size_t(labels[i]) == j)
                                       p -= T(1);
                                   gin[0]->re()[i * k + j] += scale * p;
                               }
                       });
}

}  // namespace op

#define CVNN_INSTANTIATE(T)                                                                                          \
    template struct BatchNormState<T>;                                                                               \
    template Whitening<T> inverse_sqrt_2x2(T, T, T, T);                                                              \
    template ComplexTensor<T> complex_conv2d(const ComplexTensor<T>&, const ComplexTensor<T>&,                       \
                                             const ComplexTensor<T>*, const Conv2dOptions&);                         \
    template ComplexTensor<T> complex_batchnorm(const ComplexTensor<T>&, BatchNormState<T>&, bool,                   \
                                                const ComplexTensor<T>*, const ComplexTensor<T>*,                    \
                                                const ComplexTensor<T>*);                                            \
    template ComplexTensor<T> activation(const ComplexTensor<T>&, ActivationKind, const ComplexTensor<T>*);          \
    template PoolResult<T> complex_maxpool(const ComplexTensor<T>&, const PoolOptions&);                             \
    template ComplexTensor<T> complex_linear(const ComplexTensor<T>&, const ComplexTensor<T>&,                       \
                                             const ComplexTensor<T>*);                                               \
    template RealTensor<T> amplitude_layer(const ComplexTensor<T>&);                                                 \
    template T softmax_cross_entropy(const RealTensor<T>&, std::span<const int>);                                    \
    template RealTensor<T> softmax(const RealTensor<T>&);                                                            \
    template Variable<T> op::add(Tape<T>&, const Variable<T>&, const Variable<T>&);                                  \
    template Variable<T> op::mul(Tape<T>&, const Variable<T>&, const Variable<T>&);                                  \
    template Variable<T> op::sum_real(Tape<T>&, const Variable<T>&);                                                 \
    template Variable<T> op::sum_abs2(Tape<T>&, const Variable<T>&);                                                 \
    template Variable<T> op::inner(Tape<T>&, const Variable<T>&, const ComplexTensor<T>&);                           \
    template Variable<T> op::reshape(Tape<T>&, const Variable<T>&, Shape);                                           \
    template Variable<T> op::conv2d(Tape<T>&, const Variable<T>&, const Variable<T>&, const Variable<T>&,            \
                                    const Conv2dOptions&);                                                           \
    template Variable<T> op::batch_norm(Tape<T>&, const Variable<T>&, BatchNormState<T>&, bool, const Variable<T>&,  \
                                        const Variable<T>&, const Variable<T>&);                                     \
    template Variable<T> op::activate(Tape<T>&, const Variable<T>&, ActivationKind, const Variable<T>&);             \
    template Variable<T> op::max_pool(Tape<T>&, const Variable<T>&, const PoolOptions&);                             \
    template Variable<T> op::linear(Tape<T>&, const Variable<T>&, const Variable<T>&, const Variable<T>&);           \
    template Variable<T> op::readout(Tape<T>&, const Variable<T>&, Readout);                                         \
    template Variable<T> op::cross_entropy(Tape<T>&, const Variable<T>&, std::vector<int>);

CVNN_INSTANTIATE(float)
CVNN_INSTANTIATE(double)

#undef CVNN_INSTANTIATE

}  // namespace cvnn
