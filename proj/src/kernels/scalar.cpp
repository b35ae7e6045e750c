#include "cvnn/kernels.hpp"

#include <cmath>

namespace cvnn::kernels {
namespace {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            if (aip == T(0))
                continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += aip * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p)
                acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = arow[i];
            if (api == T(0))
                continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += api * brow[j];
        }
    }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y)
{
    for (std::size_t i = 0; i < n; ++i)
        y[i] += alpha * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y)
{
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i)
        acc += x[i] * y[i];
    return acc;
}

template <typename T>
T sum(std::size_t n, const T* x)
{
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i)
        acc += x[i];
    return acc;
}

template <typename T>
void cmul(std::size_t n, const T* ar, const T* ai, const T* br, const T* bi, T* or_, T* oi)
{
    for (std::size_t i = 0; i < n; ++i) {
        const T re = ar[i] * br[i] - ai[i] * bi[i];
        const T im = ar[i] * bi[i] + ai[i] * br[i];
        or_[i] = re;
        oi[i] = im;
    }
}

template <typename T>
void modulus(std::size_t n, const T* re, const T* im, T* out)
{
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
}

template <typename T>
void area(std::size_t n, const T* re, const T* im, T* out)
{
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::abs(re[i] * im[i]);
}

template <typename T>
void adam(std::size_t n, T* param, const T* grad, T* m, T* v, T beta1, T beta2, T step_size, T bias2_sqrt, T eps)
{
    const T one_b1 = T(1) - beta1;
    const T one_b2 = T(1) - beta2;
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grad[i];
        m[i] = beta1 * m[i] + one_b1 * g;
        v[i] = beta2 * v[i] + one_b2 * (g * g);
        param[i] -= step_size * m[i] / (std::sqrt(v[i]) / bias2_sqrt + eps);
    }
}

template <typename T>
constexpr KernelTable<T> make_table()
{
    return KernelTable<T>{Isa::Scalar, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>, &axpy<T>,    &dot<T>,
                          &sum<T>,     &cmul<T>,    &modulus<T>, &area<T>,    &adam<T>};
}

constexpr KernelTable<float> kScalarF = make_table<float>();
constexpr KernelTable<double> kScalarD = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>()
{
    return kScalarF;
}

template <>
const KernelTable<double>& scalar_table<double>()
{
    return kScalarD;
}

}  // namespace cvnn::kernels
