#include "eclab/gradcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "eclab/gradcore/kernels.hpp"

namespace eclab::ops {

namespace {

namespace kp = eclab::kernels::parallel;

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_row_vector(const Tensor<T>& row, std::size_t cols, const char* what) {
  if (row.numel() != cols || row.rows() != 1) {
    throw ShapeError(std::string(what) + ": expected a row of " + std::to_string(cols) +
                     " values, got " + shape_string(row.shape()));
  }
}

template <typename T>
void add_column_sums(std::span<const T> g, std::span<T> dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
  }
}

// Row norms clamped from below by eps, and the normalized rows.
template <typename T>
void normalize_rows(std::span<const T> x, std::span<T> y, std::span<T> norms, std::size_t rows,
                    std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < cols; ++c) ss += x[r * cols + c] * x[r * cols + c];
    const T n = std::max(std::sqrt(ss), eps);
    norms[r] = n;
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] / n;
  }
}

// dx += (dy - y (y . dy)) / norm, row-wise.
template <typename T>
void normalize_rows_backward(std::span<const T> y, std::span<const T> norms, std::span<const T> dy,
                             std::span<T> dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * dy[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
      dx[r * cols + c] += (dy[r * cols + c] - y[r * cols + c] * dot) / norms[r];
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix(av, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(av.shape()) + " * " +
                     shape_string(bv.shape()));
  }
  Tensor<T> out(Shape{m, n});
  kp::matmul_nn<T>(av.data(), bv.data(), out.data(), m, k, n, false);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, std::size_t self) {
    const auto g = tape.upstream(self);
    if (auto da = tape.sink(a); !da.empty()) kp::matmul_nt<T>(g, b.value().data(), da, m, n, k, true);
    if (auto db = tape.sink(b); !db.empty()) kp::matmul_tn<T>(a.value().data(), g, db, k, m, n, true);
  });
}

template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> bias) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_matrix(xv, "affine");
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  if (wv.rows() != k) {
    throw ShapeError("affine: inner dimensions disagree " + shape_string(xv.shape()) + " * " +
                     shape_string(wv.shape()));
  }
  require_row_vector(bias.value(), n, "affine bias");
  Tensor<T> out(Shape{m, n});
  auto o = out.data();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < m; ++r) std::copy(bv.begin(), bv.end(), o.begin() + r * n);
  kp::matmul_nn<T>(xv.data(), wv.data(), o, m, k, n, true);
  return x.tape->record(std::move(out), {x, w, bias},
                        [x, w, bias, m, k, n](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          if (auto dx = tape.sink(x); !dx.empty())
                            kp::matmul_nt<T>(g, w.value().data(), dx, m, n, k, true);
                          if (auto dw = tape.sink(w); !dw.empty())
                            kp::matmul_tn<T>(x.value().data(), g, dw, k, m, n, true);
                          if (auto db = tape.sink(bias); !db.empty()) add_column_sums<T>(g, db, m, n);
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape->record(Tensor<T>(out.shape(), std::move(out.storage())), {a, b},
                        [a, b](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          for (auto in : {a, b}) {
                            if (auto d = tape.sink(in); !d.empty())
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          }
                        });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  std::vector<T> o(a.value().data().begin(), a.value().data().end());
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape->record(Tensor<T>(a.shape(), std::move(o)), {a, b},
                        [a, b](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          if (auto d = tape.sink(a); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          if (auto d = tape.sink(b); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
                        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  std::vector<T> o(a.value().data().begin(), a.value().data().end());
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape->record(Tensor<T>(a.shape(), std::move(o)), {a, b},
                        [a, b](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          const auto av = a.value().data();
                          const auto bv = b.value().data();
                          if (auto d = tape.sink(a); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
                          if (auto d = tape.sink(b); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
                        });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  std::vector<T> o(a.value().data().begin(), a.value().data().end());
  for (auto& v : o) v *= factor;
  return a.tape->record(Tensor<T>(a.shape(), std::move(o)), {a},
                        [a, factor](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          if (auto d = tape.sink(a); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
                        });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (auto v : a.value().data()) s += static_cast<double>(v);
  return a.tape->record(Tensor<T>::scalar(static_cast<T>(s)), {a},
                        [a](Tape<T>& tape, std::size_t self) {
                          const T g = tape.upstream(self)[0];
                          if (auto d = tape.sink(a); !d.empty())
                            for (auto& v : d) v += g;
                        });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  require_row_vector(row.value(), n, "add_row");
  Tensor<T> out = xv;
  const auto rv = row.value().data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
  return x.tape->record(Tensor<T>(xv.shape(), std::move(out.storage())), {x, row},
                        [x, row, m, n](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          if (auto d = tape.sink(x); !d.empty())
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                          if (auto d = tape.sink(row); !d.empty()) add_column_sums<T>(g, d, m, n);
                        });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  require_row_vector(gain.value(), cols, "layer_norm gain");
  require_row_vector(bias.value(), cols, "layer_norm bias");
  Tensor<T> out(xv.shape());
  auto xhat = std::make_shared<std::vector<T>>(xv.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  kp::layer_norm_forward<T>(xv.data(), gain.value().data(), bias.value().data(), out.data(), *xhat,
                            *rstd, rows, cols, eps);
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, rstd, rows, cols](Tape<T>& tape, std::size_t self) {
        const auto g = tape.upstream(self);
        const auto& xh = *xhat;
        if (auto dg = tape.sink(gain); !dg.empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) dg[c] += g[r * cols + c] * xh[r * cols + c];
        if (auto db = tape.sink(bias); !db.empty()) add_column_sums<T>(g, db, rows, cols);
        auto dx = tape.sink(x);
        if (dx.empty()) return;
        const auto gv = gain.value().data();
        std::vector<T> dxh(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxh[c] = g[r * cols + c] * gv[c];
            mean_d += dxh[c];
            mean_dx += dxh[c] * xh[r * cols + c];
          }
          mean_d /= static_cast<T>(cols);
          mean_dx /= static_cast<T>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            dx[r * cols + c] += (*rstd)[r] * (dxh[c] - mean_d - xh[r * cols + c] * mean_dx);
          }
        }
      });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.shape());
  kp::softmax_rows<T>(xv.data(), out.data(), rows, cols);
  auto y = std::make_shared<std::vector<T>>(out.storage());
  return x.tape->record(std::move(out), {x}, [x, y, rows, cols](Tape<T>& tape, std::size_t self) {
    auto dx = tape.sink(x);
    if (dx.empty()) return;
    const auto g = tape.upstream(self);
    const auto& yv = *y;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * yv[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        dx[r * cols + c] += yv[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  kp::gelu_forward<T>(xv.data(), out.data());
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, std::size_t self) {
    if (auto dx = tape.sink(x); !dx.empty())
      kp::gelu_backward<T>(x.value().data(), tape.upstream(self), dx);
  });
}

template <typename T>
Var<T> l2_normalize(Var<T> x, T eps) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.shape());
  auto norms = std::make_shared<std::vector<T>>(rows);
  normalize_rows<T>(xv.data(), out.data(), *norms, rows, cols, eps);
  auto y = std::make_shared<std::vector<T>>(out.storage());
  return x.tape->record(std::move(out), {x}, [x, y, norms, rows, cols](Tape<T>& tape, std::size_t self) {
    if (auto dx = tape.sink(x); !dx.empty())
      normalize_rows_backward<T>(*y, *norms, tape.upstream(self), dx, rows, cols);
  });
}

template <typename T>
Var<T> cosine_similarity_matrix(Var<T> a, Var<T> b, T eps) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix(av, "cosine_similarity_matrix");
  require_matrix(bv, "cosine_similarity_matrix");
  if (av.cols() != bv.cols()) {
    throw ShapeError("cosine_similarity_matrix: dimension mismatch " + shape_string(av.shape()) +
                     " vs " + shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  auto ah = std::make_shared<std::vector<T>>(n * d);
  auto bh = std::make_shared<std::vector<T>>(m * d);
  auto an = std::make_shared<std::vector<T>>(n);
  auto bn = std::make_shared<std::vector<T>>(m);
  normalize_rows<T>(av.data(), *ah, *an, n, d, eps);
  normalize_rows<T>(bv.data(), *bh, *bn, m, d, eps);
  Tensor<T> out(Shape{n, m});
  kp::matmul_nt<T>(*ah, *bh, out.data(), n, d, m, false);
  return a.tape->record(std::move(out), {a, b},
                        [a, b, ah, bh, an, bn, n, m, d](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          if (auto da = tape.sink(a); !da.empty()) {
                            std::vector<T> dah(n * d);
                            kp::matmul_nn<T>(g, *bh, dah, n, m, d, false);
                            normalize_rows_backward<T>(*ah, *an, dah, da, n, d);
                          }
                          if (auto db = tape.sink(b); !db.empty()) {
                            std::vector<T> dbh(m * d);
                            kp::matmul_tn<T>(g, *ah, dbh, m, n, d, false);
                            normalize_rows_backward<T>(*bh, *bn, dbh, db, m, d);
                          }
                        });
}

template <typename T>
Var<T> self_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq_len, std::size_t num_heads) {
  const auto& qv = q.value();
  require_matrix(qv, "self_attention");
  require_same_shape(qv, k.value(), "self_attention k");
  require_same_shape(qv, v.value(), "self_attention v");
  const std::size_t tokens = qv.rows(), width = qv.cols();
  if (seq_len == 0 || tokens % seq_len != 0) {
    throw ShapeError("self_attention: token count " + std::to_string(tokens) +
                     " is not a multiple of sequence length " + std::to_string(seq_len));
  }
  if (num_heads == 0 || width % num_heads != 0) {
    throw ShapeError("self_attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  const std::size_t batch = tokens / seq_len, hd = width / num_heads, S = seq_len;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  // probs[((n * H + h) * S + s) * S + s']
  auto probs = std::make_shared<std::vector<T>>(batch * num_heads * S * S);
  Tensor<T> out(qv.shape());
  const auto Q = qv.data();
  const auto K = k.value().data();
  const auto V = v.value().data();
  auto O = out.data();
  const auto nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch * width * S * S >= (1 << 15))
  for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
    const auto n = static_cast<std::size_t>(bi);
    std::vector<T> scores(S);
    for (std::size_t h = 0; h < num_heads; ++h) {
      for (std::size_t s = 0; s < S; ++s) {
        const T* qrow = Q.data() + (n * S + s) * width + h * hd;
        for (std::size_t t = 0; t < S; ++t) {
          const T* krow = K.data() + (n * S + t) * width + h * hd;
          T dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += qrow[c] * krow[c];
          scores[t] = dot * inv_sqrt;
        }
        T* p = probs->data() + ((n * num_heads + h) * S + s) * S;
        T mx = scores[0];
        for (std::size_t t = 1; t < S; ++t) mx = std::max(mx, scores[t]);
        T total = 0;
        for (std::size_t t = 0; t < S; ++t) {
          p[t] = std::exp(scores[t] - mx);
          total += p[t];
        }
        for (std::size_t t = 0; t < S; ++t) p[t] /= total;
        T* orow = O.data() + (n * S + s) * width + h * hd;
        for (std::size_t c = 0; c < hd; ++c) orow[c] = 0;
        for (std::size_t t = 0; t < S; ++t) {
          const T* vrow = V.data() + (n * S + t) * width + h * hd;
          for (std::size_t c = 0; c < hd; ++c) orow[c] += p[t] * vrow[c];
        }
      }
    }
  }
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, probs, batch, num_heads, S, hd, width, inv_sqrt](Tape<T>& tape, std::size_t self) {
        const auto G = tape.upstream(self);
        auto dQ = tape.sink(q);
        auto dK = tape.sink(k);
        auto dV = tape.sink(v);
        const auto Q = q.value().data();
        const auto K = k.value().data();
        const auto V = v.value().data();
        const auto nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch * width * S * S >= (1 << 15))
        for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
          const auto n = static_cast<std::size_t>(bi);
          std::vector<T> dp(S), ds(S);
          for (std::size_t h = 0; h < num_heads; ++h) {
            for (std::size_t s = 0; s < S; ++s) {
              const T* p = probs->data() + ((n * num_heads + h) * S + s) * S;
              const T* grow = G.data() + (n * S + s) * width + h * hd;
              for (std::size_t t = 0; t < S; ++t) {
                const T* vrow = V.data() + (n * S + t) * width + h * hd;
                T dot = 0;
                for (std::size_t c = 0; c < hd; ++c) dot += grow[c] * vrow[c];
                dp[t] = dot;
                if (!dV.empty()) {
                  T* dvrow = dV.data() + (n * S + t) * width + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) dvrow[c] += p[t] * grow[c];
                }
              }
              T inner = 0;
              for (std::size_t t = 0; t < S; ++t) inner += dp[t] * p[t];
              for (std::size_t t = 0; t < S; ++t) ds[t] = p[t] * (dp[t] - inner) * inv_sqrt;
              const T* qrow = Q.data() + (n * S + s) * width + h * hd;
              for (std::size_t t = 0; t < S; ++t) {
                const T* krow = K.data() + (n * S + t) * width + h * hd;
                if (!dQ.empty()) {
                  T* dqrow = dQ.data() + (n * S + s) * width + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) dqrow[c] += ds[t] * krow[c];
                }
                if (!dK.empty()) {
                  T* dkrow = dK.data() + (n * S + t) * width + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) dkrow[c] += ds[t] * qrow[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> interleave_tokens(const std::vector<Var<T>>& slots) {
  if (slots.empty()) throw ShapeError("interleave_tokens: no slots");
  const auto& first = slots.front().value();
  require_matrix(first, "interleave_tokens");
  for (const auto& s : slots) require_same_shape(first, s.value(), "interleave_tokens");
  const std::size_t n = first.rows(), d = first.cols(), S = slots.size();
  Tensor<T> out(Shape{n * S, d});
  for (std::size_t s = 0; s < S; ++s) {
    const auto src = slots[s].value().data();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(src.begin() + r * d, d, out.data().begin() + (r * S + s) * d);
  }
  return slots.front().tape->record(
      std::move(out), slots, [slots, n, d, S](Tape<T>& tape, std::size_t self) {
        const auto g = tape.upstream(self);
        for (std::size_t s = 0; s < S; ++s) {
          auto dst = tape.sink(slots[s]);
          if (dst.empty()) continue;
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) dst[r * d + c] += g[(r * S + s) * d + c];
        }
      });
}

template <typename T>
Var<T> broadcast_rows(Var<T> row, std::size_t n) {
  const std::size_t d = row.value().numel();
  require_row_vector(row.value(), d, "broadcast_rows");
  if (n == 0) throw ShapeError("broadcast_rows: zero rows requested");
  Tensor<T> out(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(row.value().data().begin(), d, out.data().begin() + r * d);
  return row.tape->record(std::move(out), {row}, [row, n, d](Tape<T>& tape, std::size_t self) {
    if (auto dst = tape.sink(row); !dst.empty()) add_column_sums<T>(tape.upstream(self), dst, n, d);
  });
}

template <typename T>
Var<T> take_token(Var<T> x, std::size_t seq_len, std::size_t slot) {
  const auto& xv = x.value();
  require_matrix(xv, "take_token");
  if (seq_len == 0 || xv.rows() % seq_len != 0 || slot >= seq_len) {
    throw ShapeError("take_token: invalid slot " + std::to_string(slot) + " of " +
                     std::to_string(seq_len) + " for " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.rows() / seq_len, d = xv.cols();
  Tensor<T> out(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(xv.data().begin() + (r * seq_len + slot) * d, d, out.data().begin() + r * d);
  return x.tape->record(std::move(out), {x}, [x, n, d, seq_len, slot](Tape<T>& tape, std::size_t self) {
    const auto g = tape.upstream(self);
    if (auto dx = tape.sink(x); !dx.empty())
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) dx[(r * seq_len + slot) * d + c] += g[r * d + c];
  });
}

template <typename T>
Var<T> replace_rows(Var<T> x, Var<T> row, std::span<const std::uint8_t> mask) {
  const auto& xv = x.value();
  require_matrix(xv, "replace_rows");
  const std::size_t n = xv.rows(), d = xv.cols();
  require_row_vector(row.value(), d, "replace_rows");
  if (mask.size() != n) {
    throw ShapeError("replace_rows: mask length " + std::to_string(mask.size()) + " != rows " +
                     std::to_string(n));
  }
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < n; ++r)
    if (mask[r]) std::copy_n(row.value().data().begin(), d, out.data().begin() + r * d);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return x.tape->record(Tensor<T>(xv.shape(), std::move(out.storage())), {x, row},
                        [x, row, m, n, d](Tape<T>& tape, std::size_t self) {
                          const auto g = tape.upstream(self);
                          auto dx = tape.sink(x);
                          auto drow = tape.sink(row);
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t c = 0; c < d; ++c) {
                              if (m[r]) {
                                if (!drow.empty()) drow[c] += g[r * d + c];
                              } else if (!dx.empty()) {
                                dx[r * d + c] += g[r * d + c];
                              }
                            }
                          }
                        });
}

#define ECLAB_INSTANTIATE_OPS(T)                                                               \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                   \
  template Var<T> affine<T>(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> add<T>(Var<T>, Var<T>);                                                      \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> scale<T>(Var<T>, T);                                                         \
  template Var<T> sum<T>(Var<T>);                                                              \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                  \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                    \
  template Var<T> softmax<T>(Var<T>);                                                          \
  template Var<T> gelu<T>(Var<T>);                                                             \
  template Var<T> l2_normalize<T>(Var<T>, T);                                                  \
  template Var<T> cosine_similarity_matrix<T>(Var<T>, Var<T>, T);                              \
  template Var<T> self_attention<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);         \
  template Var<T> interleave_tokens<T>(const std::vector<Var<T>>&);                            \
  template Var<T> broadcast_rows<T>(Var<T>, std::size_t);                                      \
  template Var<T> take_token<T>(Var<T>, std::size_t, std::size_t);                            \
  template Var<T> replace_rows<T>(Var<T>, Var<T>, std::span<const std::uint8_t>);

ECLAB_INSTANTIATE_OPS(float)
ECLAB_INSTANTIATE_OPS(double)

#undef ECLAB_INSTANTIATE_OPS

}  // namespace eclab::ops

namespace eclab {

template <typename T>
double cosine(std::span<const T> a, std::span<const T> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

template <typename T>
std::vector<double> cosine_table(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("cosine_table: dimension mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(a.rows() * b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out[i * b.rows() + j] = cosine<T>(a.row(i), b.row(j));
  return out;
}

template double cosine<float>(std::span<const float>, std::span<const float>);
template double cosine<double>(std::span<const double>, std::span<const double>);
template std::vector<double> cosine_table<float>(const Tensor<float>&, const Tensor<float>&);
template std::vector<double> cosine_table<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace eclab
