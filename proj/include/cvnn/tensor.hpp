#pragma once

// Complex tensors in split representation: two real planes of identical
// shape, row-major, NCHW for 4-D data.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvnn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class RealTensor {
public:
    RealTensor() = default;
    explicit RealTensor(Shape shape);
    RealTensor(Shape shape, std::vector<T> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
class ComplexTensor {
public:
    using value_type = T;

    ComplexTensor() = default;
    /// Zero-filled tensor.
    explicit ComplexTensor(Shape shape);
    ComplexTensor(Shape shape, std::vector<T> re, std::vector<T> im);

    static ComplexTensor zeros_like(const ComplexTensor& other) { return ComplexTensor(other.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return re_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const { return shape_.empty() && re_.empty(); }

    std::span<T> re() { return re_; }
    std::span<const T> re() const { return re_; }
    std::span<T> im() { return im_; }
    std::span<const T> im() const { return im_; }

    void fill(T re, T im);
    bool all_finite() const;

    /// Same data under a new shape with equal element count.
    ComplexTensor reshaped(Shape shape) const;

private:
    Shape shape_;
    std::vector<T> re_;
    std::vector<T> im_;
};

template <typename T>
ComplexTensor<T> add(const ComplexTensor<T>& a, const ComplexTensor<T>& b);
template <typename T>
ComplexTensor<T> mul(const ComplexTensor<T>& a, const ComplexTensor<T>& b);

/// |z| = sqrt(re^2 + im^2) per element.
template <typename T>
RealTensor<T> modulus(const ComplexTensor<T>& a);
/// |re * im| per element; the pooling score of area max-pooling.
template <typename T>
RealTensor<T> area_score(const ComplexTensor<T>& a);

template <typename T>
ComplexTensor<T> reshape(const ComplexTensor<T>& a, Shape shape);
/// Half-open [begin, end) ranges, one per axis.
template <typename T>
ComplexTensor<T> slice(const ComplexTensor<T>& a, const std::vector<std::size_t>& begin,
                       const std::vector<std::size_t>& end);
/// Zero padding on the two trailing (spatial) axes: {top, bottom, left, right}.
template <typename T>
ComplexTensor<T> pad(const ComplexTensor<T>& a, std::size_t top, std::size_t bottom, std::size_t left,
                     std::size_t right);
template <typename T>
ComplexTensor<T> concat(const ComplexTensor<T>& a, const ComplexTensor<T>& b, std::size_t axis);

/// Converts precision; both planes are cast element-wise.
template <typename To, typename From>
ComplexTensor<To> cast(const ComplexTensor<From>& a)
{
    std::vector<To> re(a.re().begin(), a.re().end());
    std::vector<To> im(a.im().begin(), a.im().end());
    return ComplexTensor<To>(a.shape(), std::move(re), std::move(im));
}

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace cvnn
