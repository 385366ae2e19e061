#pragma once

#include <cstddef>

#include "fallnet/real.hpp"

// Hot inner loops shared by the dense, conv, and recurrent layers. Fixed
// accumulation order keeps results bit-identical run to run; the 8-way
// unroll gives the compiler independent dependency chains to vectorize.

namespace fallnet::kern {

inline real dot(const real* a, const real* b, size_t n) {
    real s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
        s4 += a[j + 4] * b[j + 4];
        s5 += a[j + 5] * b[j + 5];
        s6 += a[j + 6] * b[j + 6];
        s7 += a[j + 7] * b[j + 7];
    }
    real s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; j < n; ++j) {
        s += a[j] * b[j];
    }
    return s;
}

// y = W x, W row-major [m x n].
inline void matvec(const real* w, const real* x, real* y, size_t m, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        y[i] = dot(w + i * n, x, n);
    }
}

// y += alpha * x.
inline void axpy(real alpha, const real* x, real* y, size_t n) {
    for (size_t j = 0; j < n; ++j) {
        y[j] += alpha * x[j];
    }
}

// out += W^T a, W row-major [m x n], a length m, out length n.
inline void matvec_t_acc(const real* w, const real* a, real* out, size_t m, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        axpy(a[i], w + i * n, out, n);
    }
}

// dW += a b^T, dW row-major [m x n].
inline void outer_acc(real* dw, const real* a, const real* b, size_t m, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        axpy(a[i], b, dw + i * n, n);
    }
}

} // namespace fallnet::kern
