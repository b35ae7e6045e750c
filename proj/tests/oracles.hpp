#pragma once

// Independent reference computations written with std::complex and plain
// loops, sharing no code with the library.

#include "cvnn/layers.hpp"

#include <complex>
#include <random>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

inline cd at(const cvnn::ComplexTensor<double>& t, std::size_t i)
{
    return {t.re()[i], t.im()[i]};
}

/// out[n,o,y,x] = Σ_{c,i,j} W[o,c,i,j] · X[n,c,y·s+i-p, x·s+j-p] + b[o]
inline cvnn::ComplexTensor<double> conv2d(const cvnn::ComplexTensor<double>& x, const cvnn::ComplexTensor<double>& w,
                                          const cvnn::ComplexTensor<double>* b, std::size_t stride, std::size_t pad)
{
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    cvnn::ComplexTensor<double> out(cvnn::Shape{n, cout, oh, ow});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    cd acc = b ? at(*b, o) : cd{};
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                const long iy = long(y * stride + i) - long(pad);
                                const long ix = long(xx * stride + j) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd))
                                    continue;
                                acc += at(w, ((o * cin + c) * kh + i) * kw + j) *
                                       at(x, ((s * cin + c) * h + std::size_t(iy)) * wd + std::size_t(ix));
                            }
                    const std::size_t idx = ((s * cout + o) * oh + y) * ow + xx;
                    out.re()[idx] = acc.real();
                    out.im()[idx] = acc.imag();
                }
    return out;
}

struct Moments {
    double mean_re, mean_im, vrr, vri, vii;
};

/// Per-channel population mean and covariance over (N, H, W).
inline std::vector<Moments> channel_moments(const cvnn::ComplexTensor<double>& t)
{
    const std::size_t n = t.dim(0), c = t.dim(1), hw = t.size() / (n * c);
    std::vector<Moments> out(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mr = 0, mi = 0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t k = 0; k < hw; ++k) {
                mr += t.re()[(s * c + ch) * hw + k];
                mi += t.im()[(s * c + ch) * hw + k];
            }
        const double m = double(n * hw);
        mr /= m;
        mi /= m;
        double rr = 0, ri = 0, ii = 0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t k = 0; k < hw; ++k) {
                const double dr = t.re()[(s * c + ch) * hw + k] - mr, di = t.im()[(s * c + ch) * hw + k] - mi;
                rr += dr * dr;
                ri += dr * di;
                ii += di * di;
            }
        out[ch] = {mr, mi, rr / m, ri / m, ii / m};
    }
    return out;
}

/// Index of the first maximal score in a window (strict comparison).
template <typename Score>
std::size_t first_argmax(const std::vector<cd>& window, Score score)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < window.size(); ++i)
        if (score(window[i]) > score(window[best]))
            best = i;
    return best;
}

inline double amplitude(cd z)
{
    return std::sqrt(z.real() * z.real() + z.imag() * z.imag());
}

inline double area(cd z)
{
    return std::abs(z.real() * z.imag());
}

inline cvnn::ComplexTensor<double> random_tensor(cvnn::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1)
{
    std::uniform_real_distribution<double> d(lo, hi);
    cvnn::ComplexTensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.re()[i] = d(rng);
        t.im()[i] = d(rng);
    }
    return t;
}

inline double max_rel_diff(const cvnn::ComplexTensor<double>& a, const cvnn::ComplexTensor<double>& b)
{
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = std::abs(at(a, i) - at(b, i));
        const double scale = std::max({std::abs(at(a, i)), std::abs(at(b, i)), 1e-300});
        worst = std::max(worst, da / scale);
    }
    return worst;
}

}  // namespace oracle
