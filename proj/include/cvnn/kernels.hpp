#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference
// and, where the build supports it, an AVX2/FMA variant. The variant is
// picked once at startup from the CPU's feature bits; CVNN_ISA=scalar in
// the environment forces the reference path.

#include <cstddef>

namespace cvnn::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);

template <typename T>
struct KernelTable {
    Isa isa;
    // Row-major GEMM accumulating into C (C += A·B etc.), leading dimension
    // equal to the row length of each operand.
    // C[m×n] += A[m×k] · B[k×n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
    // C[m×n] += A[m×k] · B[n×k]ᵀ
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
    // C[m×n] += A[k×m]ᵀ · B[k×n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
    // y += alpha·x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    T (*dot)(std::size_t n, const T* x, const T* y);
    T (*sum)(std::size_t n, const T* x);
    // (or, oi) = (ar + j·ai)(br + j·bi)
    void (*cmul)(std::size_t n, const T* ar, const T* ai, const T* br, const T* bi, T* or_, T* oi);
    void (*modulus)(std::size_t n, const T* re, const T* im, T* out);
    void (*area)(std::size_t n, const T* re, const T* im, T* out);
    // Adam moment and parameter update over one contiguous plane.
    void (*adam)(std::size_t n, T* param, const T* grad, T* m, T* v, T beta1, T beta2, T step_size, T bias2_sqrt,
                 T eps);
};

bool avx2_supported();

template <typename T>
const KernelTable<T>& scalar_table();

/// Null when the binary was built without the AVX2 translation unit.
template <typename T>
const KernelTable<T>* avx2_table();

/// The table in use for this process.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();

/// Overrides the runtime choice; returns false if the ISA is unavailable.
bool set_isa(Isa isa);

}  // namespace cvnn::kernels
