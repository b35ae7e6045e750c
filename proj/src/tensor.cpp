#include "cvnn/tensor.hpp"

#include "cvnn/kernels.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace cvnn {

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
RealTensor<T>::RealTensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), T(0))
{
}

template <typename T>
RealTensor<T>::RealTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != numel(shape_))
        throw ShapeError("RealTensor: " + std::to_string(data_.size()) + " values for shape " + to_string(shape_));
}

template <typename T>
ComplexTensor<T>::ComplexTensor(Shape shape)
    : shape_(std::move(shape)), re_(numel(shape_), T(0)), im_(numel(shape_), T(0))
{
}

template <typename T>
ComplexTensor<T>::ComplexTensor(Shape shape, std::vector<T> re, std::vector<T> im)
    : shape_(std::move(shape)), re_(std::move(re)), im_(std::move(im))
{
    const auto n = numel(shape_);
    if (re_.size() != n || im_.size() != n)
        throw ShapeError("ComplexTensor: planes of " + std::to_string(re_.size()) + "/" + std::to_string(im_.size()) +
                         " values for shape " + to_string(shape_));
}

template <typename T>
void ComplexTensor<T>::fill(T re, T im)
{
    std::fill(re_.begin(), re_.end(), re);
    std::fill(im_.begin(), im_.end(), im);
}

template <typename T>
bool ComplexTensor<T>::all_finite() const
{
    for (std::size_t i = 0; i < re_.size(); ++i)
        if (!std::isfinite(re_[i]) || !std::isfinite(im_[i]))
            return false;
    return true;
}

template <typename T>
ComplexTensor<T> ComplexTensor<T>::reshaped(Shape shape) const
{
    if (numel(shape) != size())
        throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
    return ComplexTensor(std::move(shape), re_, im_);
}

template <typename T>
ComplexTensor<T> add(const ComplexTensor<T>& a, const ComplexTensor<T>& b)
{
    require_same_shape(a.shape(), b.shape(), "add");
    ComplexTensor<T> out(a.shape());
    auto& k = kernels::active<T>();
    auto ore = out.re(), oim = out.im();
    std::copy(a.re().begin(), a.re().end(), ore.begin());
    std::copy(a.im().begin(), a.im().end(), oim.begin());
    k.axpy(a.size(), T(1), b.re().data(), ore.data());
    k.axpy(a.size(), T(1), b.im().data(), oim.data());
    return out;
}

template <typename T>
ComplexTensor<T> mul(const ComplexTensor<T>& a, const ComplexTensor<T>& b)
{
    require_same_shape(a.shape(), b.shape(), "mul");
    ComplexTensor<T> out(a.shape());
    kernels::active<T>().cmul(a.size(), a.re().data(), a.im().data(), b.re().data(), b.im().data(), out.re().data(),
                              out.im().data());
    return out;
}

template <typename T>
RealTensor<T> modulus(const ComplexTensor<T>& a)
{
    RealTensor<T> out(a.shape());
    kernels::active<T>().modulus(a.size(), a.re().data(), a.im().data(), out.data().data());
    return out;
}

template <typename T>
RealTensor<T> area_score(const ComplexTensor<T>& a)
{
    RealTensor<T> out(a.shape());
    kernels::active<T>().area(a.size(), a.re().data(), a.im().data(), out.data().data());
    return out;
}

template <typename T>
ComplexTensor<T> reshape(const ComplexTensor<T>& a, Shape shape)
{
    return a.reshaped(std::move(shape));
}

namespace {

std::vector<std::size_t> strides_of(const Shape& shape)
{
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;)
        strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// Visits every multi-index of `extent` in row-major order.
template <typename F>
void for_each_index(const Shape& extent, F&& f)
{
    if (numel(extent) == 0)
        return;
    std::vector<std::size_t> idx(extent.size(), 0);
    while (true) {
        f(idx);
        std::size_t axis = extent.size();
        while (axis > 0) {
            --axis;
            if (++idx[axis] < extent[axis])
                break;
            idx[axis] = 0;
            if (axis == 0)
                return;
        }
        if (extent.empty())
            return;
    }
}

}  // namespace

template <typename T>
ComplexTensor<T> slice(const ComplexTensor<T>& a, const std::vector<std::size_t>& begin,
                       const std::vector<std::size_t>& end)
{
    const auto& shape = a.shape();
    if (begin.size() != shape.size() || end.size() != shape.size())
        throw ShapeError("slice: bounds rank does not match " + to_string(shape));
    Shape out_shape(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (begin[i] > end[i] || end[i] > shape[i])
            throw ShapeError("slice: bounds [" + std::to_string(begin[i]) + "," + std::to_string(end[i]) +
                             ") out of range on axis " + std::to_string(i) + " of " + to_string(shape));
        out_shape[i] = end[i] - begin[i];
    }
    ComplexTensor<T> out(out_shape);
    const auto in_strides = strides_of(shape);
    auto ore = out.re(), oim = out.im();
    std::size_t o = 0;
    for_each_index(out_shape, [&](const std::vector<std::size_t>& idx) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < idx.size(); ++i)
            src += (idx[i] + begin[i]) * in_strides[i];
        ore[o] = a.re()[src];
        oim[o] = a.im()[src];
        ++o;
    });
    return out;
}

template <typename T>
ComplexTensor<T> pad(const ComplexTensor<T>& a, std::size_t top, std::size_t bottom, std::size_t left,
                     std::size_t right)
{
    const auto& shape = a.shape();
    if (shape.size() < 2)
        throw ShapeError("pad: needs at least two axes, got " + to_string(shape));
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    const std::size_t oh = h + top + bottom, ow = w + left + right;
    Shape out_shape = shape;
    out_shape[shape.size() - 2] = oh;
    out_shape[shape.size() - 1] = ow;
    ComplexTensor<T> out(out_shape);
    const std::size_t planes = (h * w == 0) ? 0 : a.size() / (h * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t src = (p * h + y) * w;
            const std::size_t dst = (p * oh + y + top) * ow + left;
            std::copy_n(a.re().begin() + src, w, out.re().begin() + dst);
            std::copy_n(a.im().begin() + src, w, out.im().begin() + dst);
        }
    return out;
}

template <typename T>
ComplexTensor<T> concat(const ComplexTensor<T>& a, const ComplexTensor<T>& b, std::size_t axis)
{
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size() || axis >= sa.size())
        throw ShapeError("concat: incompatible ranks " + to_string(sa) + " and " + to_string(sb));
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (i != axis && sa[i] != sb[i])
            throw ShapeError("concat: extents differ off axis " + std::to_string(axis) + ": " + to_string(sa) +
                             " vs " + to_string(sb));
    Shape out_shape = sa;
    out_shape[axis] += sb[axis];
    ComplexTensor<T> out(out_shape);
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= sa[i];
    const std::size_t chunk_a = numel(Shape(sa.begin() + axis, sa.end()));
    const std::size_t chunk_b = numel(Shape(sb.begin() + axis, sb.end()));
    auto ore = out.re().begin(), oim = out.im().begin();
    for (std::size_t o = 0; o < outer; ++o) {
        ore = std::copy_n(a.re().begin() + o * chunk_a, chunk_a, ore);
        oim = std::copy_n(a.im().begin() + o * chunk_a, chunk_a, oim);
        ore = std::copy_n(b.re().begin() + o * chunk_b, chunk_b, ore);
        oim = std::copy_n(b.im().begin() + o * chunk_b, chunk_b, oim);
    }
    return out;
}

#define CVNN_INSTANTIATE(T)                                                                                         \
    template class RealTensor<T>;                                                                                   \
    template class ComplexTensor<T>;                                                                                \
    template ComplexTensor<T> add(const ComplexTensor<T>&, const ComplexTensor<T>&);                                \
    template ComplexTensor<T> mul(const ComplexTensor<T>&, const ComplexTensor<T>&);                                \
    template RealTensor<T> modulus(const ComplexTensor<T>&);                                                        \
    template RealTensor<T> area_score(const ComplexTensor<T>&);                                                     \
    template ComplexTensor<T> reshape(const ComplexTensor<T>&, Shape);                                              \
    template ComplexTensor<T> slice(const ComplexTensor<T>&, const std::vector<std::size_t>&,                       \
                                    const std::vector<std::size_t>&);                                               \
    template ComplexTensor<T> pad(const ComplexTensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);     \
    template ComplexTensor<T> concat(const ComplexTensor<T>&, const ComplexTensor<T>&, std::size_t);

CVNN_INSTANTIATE(float)
CVNN_INSTANTIATE(double)

#undef CVNN_INSTANTIATE

}  // namespace cvnn
