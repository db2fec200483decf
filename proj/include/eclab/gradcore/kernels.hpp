#pragma once

// Dense inner loops of the numeric core.
//
// Every kernel exists twice: `serial` is the plain reference kept for
// testing, `parallel` distributes independent output rows over OpenMP
// threads. Each output element is accumulated in the same order in both
// versions, so results are bitwise identical at any thread count.
//
// Matrices are row-major spans with explicit dimensions:
//   matmul_nn: c[m x n] = a[m x k] * b[k x n]
//   matmul_nt: c[m x n] = a[m x k] * b[n x k]^T
//   matmul_tn: c[m x n] = a[k x m]^T * b[k x n]
// With `accumulate` the product is added to c instead of overwriting it.

#include <cstddef>
#include <span>

namespace eclab::kernels {

namespace serial {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y);
template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);
template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> xhat, std::span<T> rstd, std::size_t rows,
                        std::size_t cols, T eps);
template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);

}  // namespace serial

namespace parallel {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y);
template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);
template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> xhat, std::span<T> rstd, std::size_t rows,
                        std::size_t cols, T eps);
template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace eclab::kernels
