#include "cvnn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace cvnn::kernels {

#ifndef CVNN_HAVE_AVX2
template <>
const KernelTable<float>* avx2_table<float>()
{
    return nullptr;
}
template <>
const KernelTable<double>* avx2_table<double>()
{
    return nullptr;
}
#endif

namespace {

Isa detect()
{
    if (const char* env = std::getenv("CVNN_ISA"); env && std::strcmp(env, "scalar") == 0)
        return Isa::Scalar;
    return avx2_supported() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current()
{
    static std::atomic<Isa> isa{detect()};
    return isa;
}

}  // namespace

const char* isa_name(Isa isa)
{
    return isa == Isa::Avx2 ? "avx2" : "scalar";
}

bool avx2_supported()
{
#if defined(CVNN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa active_isa()
{
    return current().load(std::memory_order_relaxed);
}

bool set_isa(Isa isa)
{
    if (isa == Isa::Avx2 && !avx2_supported())
        return false;
    current().store(isa, std::memory_order_relaxed);
    return true;
}

template <typename T>
const KernelTable<T>& active()
{
    if (active_isa() == Isa::Avx2)
        return *avx2_table<T>();
    return scalar_table<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace cvnn::kernels
