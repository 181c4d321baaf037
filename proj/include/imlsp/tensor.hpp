#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "imlsp/error.hpp"

namespace imlsp {

// Dense row-major f64 tensor. Immutable shape, mutable data. All math in
// this toolkit runs in double precision.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector1d(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t i, std::size_t j) {
        return data_[i * shape_[1] + j];
    }
    double at2(std::size_t i, std::size_t j) const {
        return data_[i * shape_[1] + j];
    }

    // [C,X,Y,Z] indexing, z fastest in memory.
    std::size_t index4(std::size_t c, std::size_t x, std::size_t y,
                       std::size_t z) const {
        return ((c * shape_[1] + x) * shape_[2] + y) * shape_[3] + z;
    }
    double& at4(std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
        return data_[index4(c, x, y, z)];
    }
    double at4(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
        return data_[index4(c, x, y, z)];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << ",";
            os << s[i];
        }
        os << "]";
        return os.str();
    }

private:
    // Zero extents are legal (an empty rank-1 tensor concatenates as a
    // no-op); the product of extents is then zero.
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline bool is_scalar(const Tensor& t) { return t.size() == 1; }

inline Tensor transpose2(const Tensor& t) {
    if (t.rank() != 2)
        throw ShapeError("transpose2: expected rank 2, got " + t.shape_str());
    Tensor out({t.extent(1), t.extent(0)});
    for (std::size_t i = 0; i < t.extent(0); ++i)
        for (std::size_t j = 0; j < t.extent(1); ++j)
            out.at2(j, i) = t.at2(i, j);
    return out;
}

}  // namespace imlsp
