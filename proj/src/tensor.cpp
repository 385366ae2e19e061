#include "fallnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fallnet/kernels.hpp"

namespace fallnet {

size_t shape_size(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), real(0)) {}

Tensor::Tensor(std::vector<size_t> shape, std::vector<real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                    " values for shape " + shape_to_string(shape_));
    }
}

size_t Tensor::dim(size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::out_of_range("Tensor::dim: axis " + std::to_string(axis) +
                                " for rank " + std::to_string(shape_.size()));
    }
    return shape_[axis];
}

std::string Tensor::shape_str() const {
    return shape_to_string(shape_);
}

namespace {

[[noreturn]] void bad_index(const std::vector<size_t>& shape, size_t axis, size_t idx) {
    throw std::out_of_range("Tensor: index " + std::to_string(idx) + " on axis " +
                            std::to_string(axis) + " of " + shape_to_string(shape));
}

void check_rank(const std::vector<size_t>& shape, size_t rank) {
    if (shape.size() != rank) {
        throw std::out_of_range("Tensor: rank-" + std::to_string(rank) +
                                " access on " + shape_to_string(shape));
    }
}

} // namespace

size_t Tensor::offset2(size_t i, size_t j) const {
    check_rank(shape_, 2);
    if (i >= shape_[0]) bad_index(shape_, 0, i);
    if (j >= shape_[1]) bad_index(shape_, 1, j);
    return i * shape_[1] + j;
}

size_t Tensor::offset3(size_t i, size_t j, size_t k) const {
    check_rank(shape_, 3);
    if (i >= shape_[0]) bad_index(shape_, 0, i);
    if (j >= shape_[1]) bad_index(shape_, 1, j);
    if (k >= shape_[2]) bad_index(shape_, 2, k);
    return (i * shape_[1] + j) * shape_[2] + k;
}

size_t Tensor::offset4(size_t i, size_t j, size_t k, size_t l) const {
    check_rank(shape_, 4);
    if (i >= shape_[0]) bad_index(shape_, 0, i);
    if (j >= shape_[1]) bad_index(shape_, 1, j);
    if (k >= shape_[2]) bad_index(shape_, 2, k);
    if (l >= shape_[3]) bad_index(shape_, 3, l);
    return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
}

real& Tensor::at(size_t i) {
    check_rank(shape_, 1);
    if (i >= shape_[0]) bad_index(shape_, 0, i);
    return data_[i];
}

const real& Tensor::at(size_t i) const {
    return const_cast<Tensor*>(this)->at(i);
}

real& Tensor::at(size_t i, size_t j) {
    return data_[offset2(i, j)];
}

const real& Tensor::at(size_t i, size_t j) const {
    return data_[offset2(i, j)];
}

real& Tensor::at(size_t i, size_t j, size_t k) {
    return data_[offset3(i, j, k)];
}

const real& Tensor::at(size_t i, size_t j, size_t k) const {
    return data_[offset3(i, j, k)];
}

real& Tensor::at(size_t i, size_t j, size_t k, size_t l) {
    return data_[offset4(i, j, k, l)];
}

const real& Tensor::at(size_t i, size_t j, size_t k, size_t l) const {
    return data_[offset4(i, j, k, l)];
}

void Tensor::fill(real v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const {
    for (real v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<size_t> new_shape) const {
    if (shape_size(new_shape) != data_.size()) {
        throw std::invalid_argument("Tensor::reshaped: " + shape_to_string(shape_) +
                                    " to " + shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul: need rank-2 operands, got " + a.shape_str() +
                                    " and " + b.shape_str());
    }
    size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dims differ, " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Tensor out({m, n});
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    // Accumulate row(a, i) scaled into out rows: cache-friendly for row-major b.
    for (size_t i = 0; i < m; ++i) {
        real* orow = po + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            kern::axpy(pa[i * k + kk], pb + kk * n, orow, n);
        }
    }
    return out;
}

namespace {

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* name, F f) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
    Tensor out(a.shape());
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (size_t i = 0; i < a.size(); ++i) {
        po[i] = f(pa[i], pb[i]);
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](real x, real y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](real x, real y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, "mul", [](real x, real y) { return x * y; });
}

Tensor scale(const Tensor& a, real s) {
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * s;
    }
    return out;
}

real sigmoid(real x) {
    if (x >= 0) {
        return real(1) / (real(1) + std::exp(-x));
    }
    real e = std::exp(x);
    return e / (real(1) + e);
}

real relu(real x) {
    return x > 0 ? x : real(0);
}

Tensor map_activation(Activation act, const Tensor& x) {
    Tensor out(x.shape());
    const real* px = x.data();
    real* po = out.data();
    switch (act) {
    case Activation::Relu:
        for (size_t i = 0; i < x.size(); ++i) po[i] = relu(px[i]);
        break;
    case Activation::Sigmoid:
        for (size_t i = 0; i < x.size(); ++i) po[i] = sigmoid(px[i]);
        break;
    case Activation::Tanh:
        for (size_t i = 0; i < x.size(); ++i) po[i] = std::tanh(px[i]);
        break;
    }
    return out;
}

Tensor flatten(const Tensor& x) {
    return x.reshaped({x.size()});
}

Tensor concat(const std::vector<Tensor>& parts) {
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 1) {
            throw std::invalid_argument("concat: need rank-1 parts, got " + p.shape_str());
        }
        total += p.size();
    }
    Tensor out({total});
    size_t off = 0;
    for (const Tensor& p : parts) {
        for (size_t i = 0; i < p.size(); ++i) {
            out[off + i] = p[i];
        }
        off += p.size();
    }
    return out;
}

Tensor seeded_uniform(const std::vector<size_t>& shape, real lo, real hi, SeededRng& rng) {
    Tensor out(shape);
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<real>(rng.uniform(lo, hi));
    }
    return out;
}

Tensor glorot_uniform(const std::vector<size_t>& shape, size_t fan_in, size_t fan_out,
                      SeededRng& rng) {
    if (fan_in + fan_out == 0) {
        throw std::invalid_argument("glorot_uniform: zero fans");
    }
    real limit = std::sqrt(real(6) / static_cast<real>(fan_in + fan_out));
    return seeded_uniform(shape, -limit, limit, rng);
}

} // namespace fallnet
