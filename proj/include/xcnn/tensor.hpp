#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace xcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

/// Batch extents of an image tensor in (sample, row, column, channel) order.
struct Shape4 {
    std::size_t n = 1;
    std::size_t h = 1;
    std::size_t w = 1;
    std::size_t c = 1;

    static Shape4 of(const Shape& shape) {
        if (shape.size() != 4)
            throw DimensionError("expected a rank-4 (n, h, w, c) tensor, got shape " + shape_str(shape));
        Shape4 s{shape[0], shape[1], shape[2], shape[3]};
        if (!s.n || !s.h || !s.w || !s.c)
            throw DimensionError("zero extent in shape " + shape_str(shape));
        return s;
    }

    Shape dims() const { return {n, h, w, c}; }
    std::size_t size() const { return n * h * w * c; }
    friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense row-major array; the last index varies fastest.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    BasicTensor(Shape shape, std::initializer_list<T> values)
        : BasicTensor(std::move(shape), std::vector<T>(values)) {}

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* raw() { return data_.data(); }
    const T* raw() const { return data_.data(); }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    std::size_t offset(std::span<const std::size_t> index) const {
        if (index.size() != shape_.size())
            throw DimensionError("index rank " + std::to_string(index.size()) + " does not match tensor rank " +
                                 std::to_string(shape_.size()));
        std::size_t flat = 0;
        for (std::size_t axis = 0; axis < index.size(); ++axis) {
            if (index[axis] >= shape_[axis])
                throw DimensionError("index " + std::to_string(index[axis]) + " out of range on axis " +
                                     std::to_string(axis) + " of shape " + shape_str(shape_));
            flat = flat * shape_[axis] + index[axis];
        }
        return flat;
    }

    T& at(std::initializer_list<std::size_t> index) {
        return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
    }
    const T& at(std::initializer_list<std::size_t> index) const {
        return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
    }

    // Unchecked 4-d access for hot loops.
    T& operator()(std::size_t n, std::size_t i, std::size_t j, std::size_t c) {
        return data_[((n * shape_[1] + i) * shape_[2] + j) * shape_[3] + c];
    }
    const T& operator()(std::size_t n, std::size_t i, std::size_t j, std::size_t c) const {
        return data_[((n * shape_[1] + i) * shape_[2] + j) * shape_[3] + c];
    }

    BasicTensor reshaped(Shape shape) const& {
        return BasicTensor(std::move(shape), data_);
    }
    BasicTensor reshaped(Shape shape) && {
        return BasicTensor(std::move(shape), std::move(data_));
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using ByteImage = BasicTensor<std::uint8_t>;

template <typename T>
void require_shape(const BasicTensor<T>& t, const Shape& expected, const char* what) {
    if (t.shape() != expected)
        throw DimensionError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                             shape_str(t.shape()));
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](T v) { return v == v && v - v == T{}; });
}

} // namespace xcnn
