#include "eclab/gradcore/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace eclab::kernels {

namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

constexpr double kSqrt2OverPi = 0.79788456080286535588;
constexpr double kGeluCoef = 0.044715;

template <typename T>
inline T gelu_value(T x) {
  const T inner = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluCoef) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
inline T gelu_grad(T x) {
  const T c = static_cast<T>(kSqrt2OverPi);
  const T k = static_cast<T>(kGeluCoef);
  const T th = std::tanh(c * (x + k * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
}

template <typename T>
inline void layer_norm_row(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* rstd,
                           std::size_t cols, T eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += static_cast<double>(x[j]);
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = static_cast<double>(x[j]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double r = 1.0 / std::sqrt(var + static_cast<double>(eps));
  *rstd = static_cast<T>(r);
  for (std::size_t j = 0; j < cols; ++j) {
    const T xh = static_cast<T>((static_cast<double>(x[j]) - mean) * r);
    xhat[j] = xh;
    y[j] = xh * gain[j] + bias[j];
  }
}

template <typename T>
inline void softmax_row(const T* x, T* y, std::size_t cols) {
  T mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  T sum = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_value(x[i]);
}

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * gelu_grad(x[i]);
}

template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> xhat, std::span<T> rstd, std::size_t rows,
                        std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    layer_norm_row(x.data() + r * cols, gain.data(), bias.data(), y.data() + r * cols,
                   xhat.data() + r * cols, rstd.data() + r, cols, eps);
  }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  const auto len = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelWork / 8)
  for (std::ptrdiff_t i = 0; i < len; ++i) y[i] = gelu_value(x[i]);
}

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const auto len = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelWork / 8)
  for (std::ptrdiff_t i = 0; i < len; ++i) dx[i] += dy[i] * gelu_grad(x[i]);
}

template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> xhat, std::span<T> rstd, std::size_t rows,
                        std::size_t cols, T eps) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork / 4)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const auto o = static_cast<std::size_t>(r) * cols;
    layer_norm_row(x.data() + o, gain.data(), bias.data(), y.data() + o, xhat.data() + o,
                   rstd.data() + r, cols, eps);
  }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork / 4)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const auto o = static_cast<std::size_t>(r) * cols;
    softmax_row(x.data() + o, y.data() + o, cols);
  }
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

#define ECLAB_INSTANTIATE(NS, T)                                                                 \
  template void NS::matmul_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,           \
                                 std::size_t, std::size_t, std::size_t, bool);                   \
  template void NS::matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,           \
                                 std::size_t, std::size_t, std::size_t, bool);                   \
  template void NS::matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,           \
                                 std::size_t, std::size_t, std::size_t, bool);                   \
  template void NS::gelu_forward<T>(std::span<const T>, std::span<T>);                           \
  template void NS::gelu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);      \
  template void NS::layer_norm_forward<T>(std::span<const T>, std::span<const T>,                \
                                          std::span<const T>, std::span<T>, std::span<T>,        \
                                          std::span<T>, std::size_t, std::size_t, T);            \
  template void NS::softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);

ECLAB_INSTANTIATE(serial, float)
ECLAB_INSTANTIATE(serial, double)
ECLAB_INSTANTIATE(parallel, float)
ECLAB_INSTANTIATE(parallel, double)

#undef ECLAB_INSTANTIATE

}  // namespace eclab::kernels
