#ifndef NEUROSTAGE_TENSOR_HPP
#define NEUROSTAGE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "neurostage/core.hpp"

namespace neurostage {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major tensor.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw InvalidArgument("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                                  shape_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const {
        if (shape_size(s) != data_.size())
            throw InvalidArgument("Tensor::reshaped: " + shape_string(shape_) + " -> " + shape_string(s));
        return Tensor(std::move(s), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Row-wise softmax of an [N, K] tensor, max-subtracted.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw InvalidArgument("softmax_rows: expected [N, K], got " + shape_string(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        T* o = out.data() + i * k;
        T m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            o[j] = std::exp(row[j] - m);
            sum += o[j];
        }
        for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
    }
    return out;
}

}  // namespace neurostage

#endif
