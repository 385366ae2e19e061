#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fallnet/real.hpp"
#include "fallnet/rng.hpp"

namespace fallnet {

// Dense row-major tensor. The shape is fixed at construction; data is
// exclusively owned and contiguous. All layout decisions in the library
// (weight matrices, conv feature maps, sequence caches) assume row-major
// with the last axis fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::vector<size_t> shape, std::vector<real> values);

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    size_t dim(size_t axis) const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](size_t i) { return data_[i]; }
    const real& operator[](size_t i) const { return data_[i]; }

    // Bounds-checked multidimensional access for the given rank.
    real& at(size_t i);
    const real& at(size_t i) const;
    real& at(size_t i, size_t j);
    const real& at(size_t i, size_t j) const;
    real& at(size_t i, size_t j, size_t k);
    const real& at(size_t i, size_t j, size_t k) const;
    real& at(size_t i, size_t j, size_t k, size_t l);
    const real& at(size_t i, size_t j, size_t k, size_t l) const;

    void fill(real v);
    bool all_finite() const;

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<size_t> new_shape) const;

private:
    size_t offset2(size_t i, size_t j) const;
    size_t offset3(size_t i, size_t j, size_t k) const;
    size_t offset4(size_t i, size_t j, size_t k, size_t l) const;

    std::vector<size_t> shape_;
    std::vector<real> data_;
};

size_t shape_size(const std::vector<size_t>& shape);
std::string shape_to_string(const std::vector<size_t>& shape);

// a [m x k] times b [k x n] -> [m x n]. Throws on rank or inner-dim mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise ops require exactly matching shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);

enum class Activation { Relu, Sigmoid, Tanh };
Tensor map_activation(Activation act, const Tensor& x);

// Numerically stable logistic: never forms exp of a large positive value.
real sigmoid(real x);
real relu(real x);

// Rank-1 view (copy) of the elements in row-major order.
Tensor flatten(const Tensor& x);

// Rank-1 concatenation in argument order.
Tensor concat(const std::vector<Tensor>& parts);

Tensor seeded_uniform(const std::vector<size_t>& shape, real lo, real hi, SeededRng& rng);

// Glorot/Xavier uniform on +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(const std::vector<size_t>& shape, size_t fan_in, size_t fan_out,
                      SeededRng& rng);

} // namespace fallnet
