// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include "cvnn/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace cvnn::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg set1(float x) { return _mm256_set1_ps(x); }
    static reg zero() { return _mm256_setzero_ps(); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg fmsub(reg a, reg b, reg c) { return _mm256_fmsub_ps(a, b, c); }
    static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
    static reg abs(reg a) { return _mm256_andnot_ps(_mm256_set1_ps(-0.0f), a); }
    static float hsum(reg v)
    {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg set1(double x) { return _mm256_set1_pd(x); }
    static reg zero() { return _mm256_setzero_pd(); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg fmsub(reg a, reg b, reg c) { return _mm256_fmsub_pd(a, b, c); }
    static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
    static reg abs(reg a) { return _mm256_andnot_pd(_mm256_set1_pd(-0.0), a); }
    static double hsum(reg v)
    {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
};

// c[0..n) += a0·b0 + a1·b1 + a2·b2 + a3·b3
template <typename T>
inline void axpy4(std::size_t n, T a0, T a1, T a2, T a3, const T* b0, const T* b1, const T* b2, const T* b3, T* c)
{
    using V = Vec<T>;
    const auto va0 = V::set1(a0), va1 = V::set1(a1), va2 = V::set1(a2), va3 = V::set1(a3);
    std::size_t j = 0;
    for (; j + V::width <= n; j += V::width) {
        auto acc = V::load(c + j);
        acc = V::fmadd(va0, V::load(b0 + j), acc);
        acc = V::fmadd(va1, V::load(b1 + j), acc);
        acc = V::fmadd(va2, V::load(b2 + j), acc);
        acc = V::fmadd(va3, V::load(b3 + j), acc);
        V::store(c + j, acc);
    }
    for (; j < n; ++j)
        c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
}

template <typename T>
inline void axpy1(std::size_t n, T a, const T* x, T* y)
{
    using V = Vec<T>;
    const auto va = V::set1(a);
    std::size_t j = 0;
    for (; j + V::width <= n; j += V::width)
        V::store(y + j, V::fmadd(va, V::load(x + j), V::load(y + j)));
    for (; j < n; ++j)
        y[j] += a * x[j];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y)
{
    using V = Vec<T>;
    auto acc0 = V::zero(), acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * V::width <= n; i += 2 * V::width) {
        acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
        acc1 = V::fmadd(V::load(x + i + V::width), V::load(y + i + V::width), acc1);
    }
    for (; i + V::width <= n; i += V::width)
        acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    T acc = V::hsum(V::add(acc0, acc1));
    for (; i < n; ++i)
        acc += x[i] * y[i];
    return acc;
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        std::size_t p = 0;
        for (; p + 4 <= k; p += 4) {
            if (arow[p] == T(0) && arow[p + 1] == T(0) && arow[p + 2] == T(0) && arow[p + 3] == T(0))
                continue;
            axpy4(n, arow[p], arow[p + 1], arow[p + 2], arow[p + 3], b + p * n, b + (p + 1) * n, b + (p + 2) * n,
                  b + (p + 3) * n, crow);
        }
        for (; p < k; ++p)
            if (arow[p] != T(0))
                axpy1(n, arow[p], b + p * n, crow);
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            c[i * n + j] += dot(k, a + i * k, b + j * k);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        std::size_t p = 0;
        for (; p + 4 <= k; p += 4) {
            const T a0 = a[p * m + i], a1 = a[(p + 1) * m + i], a2 = a[(p + 2) * m + i], a3 = a[(p + 3) * m + i];
            if (a0 == T(0) && a1 == T(0) && a2 == T(0) && a3 == T(0))
                continue;
            axpy4(n, a0, a1, a2, a3, b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n, crow);
        }
        for (; p < k; ++p)
            if (a[p * m + i] != T(0))
                axpy1(n, a[p * m + i], b + p * n, crow);
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y)
{
    axpy1(n, alpha, x, y);
}

template <typename T>
T sum(std::size_t n, const T* x)
{
    using V = Vec<T>;
    auto acc = V::zero();
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width)
        acc = V::add(acc, V::load(x + i));
    T total = V::hsum(acc);
    for (; i < n; ++i)
        total += x[i];
    return total;
}

template <typename T>
void cmul(std::size_t n, const T* ar, const T* ai, const T* br, const T* bi, T* or_, T* oi)
{
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const auto xr = V::load(ar + i), xi = V::load(ai + i);
        const auto yr = V::load(br + i), yi = V::load(bi + i);
        V::store(or_ + i, V::sub(V::mul(xr, yr), V::mul(xi, yi)));
        V::store(oi + i, V::add(V::mul(xr, yi), V::mul(xi, yr)));
    }
    for (; i < n; ++i) {
        const T re = ar[i] * br[i] - ai[i] * bi[i];
        const T im = ar[i] * bi[i] + ai[i] * br[i];
        or_[i] = re;
        oi[i] = im;
    }
}

template <typename T>
void modulus(std::size_t n, const T* re, const T* im, T* out)
{
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const auto r = V::load(re + i), m = V::load(im + i);
        // No FMA: pooling decisions must not depend on the ISA.
        V::store(out + i, V::sqrt(V::add(V::mul(r, r), V::mul(m, m))));
    }
    for (; i < n; ++i)
        out[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
}

template <typename T>
void area(std::size_t n, const T* re, const T* im, T* out)
{
    using V = Vec<T>;
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width)
        V::store(out + i, V::abs(V::mul(V::load(re + i), V::load(im + i))));
    for (; i < n; ++i)
        out[i] = std::abs(re[i] * im[i]);
}

template <typename T>
void adam(std::size_t n, T* param, const T* grad, T* m, T* v, T beta1, T beta2, T step_size, T bias2_sqrt, T eps)
{
    using V = Vec<T>;
    const T one_b1 = T(1) - beta1;
    const T one_b2 = T(1) - beta2;
    const auto vb1 = V::set1(beta1), vb2 = V::set1(beta2), v1b1 = V::set1(one_b1), v1b2 = V::set1(one_b2);
    const auto vstep = V::set1(step_size), vbias = V::set1(bias2_sqrt), veps = V::set1(eps);
    std::size_t i = 0;
    for (; i + V::width <= n; i += V::width) {
        const auto g = V::load(grad + i);
        const auto mi = V::add(V::mul(vb1, V::load(m + i)), V::mul(v1b1, g));
        const auto vi = V::add(V::mul(vb2, V::load(v + i)), V::mul(v1b2, V::mul(g, g)));
        V::store(m + i, mi);
        V::store(v + i, vi);
        const auto denom = V::add(V::div(V::sqrt(vi), vbias), veps);
        V::store(param + i, V::sub(V::load(param + i), V::div(V::mul(vstep, mi), denom)));
    }
    for (; i < n; ++i) {
        const T g = grad[i];
        m[i] = beta1 * m[i] + one_b1 * g;
        v[i] = beta2 * v[i] + one_b2 * (g * g);
        param[i] -= step_size * m[i] / (std::sqrt(v[i]) / bias2_sqrt + eps);
    }
}

template <typename T>
constexpr KernelTable<T> make_table()
{
    return KernelTable<T>{Isa::Avx2, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>, &axpy<T>,    &dot<T>,
                          &sum<T>,   &cmul<T>,    &modulus<T>, &area<T>,    &adam<T>};
}

constexpr KernelTable<float> kAvx2F = make_table<float>();
constexpr KernelTable<double> kAvx2D = make_table<double>();

}  // namespace

template <>
const KernelTable<float>* avx2_table<float>()
{
    return &kAvx2F;
}

template <>
const KernelTable<double>* avx2_table<double>()
{
    return &kAvx2D;
}

}  // namespace cvnn::kernels
