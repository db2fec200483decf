#pragma once

// Differentiable primitives. Every op records its output on the tape of its
// first argument together with an exact analytic backward rule.
//
// Matrices are rank-2 [rows x cols]; rank-1 tensors act as a single row
// (biases, layer-norm gains, learned embeddings).

#include <cstdint>
#include <span>
#include <vector>

#include "eclab/gradcore/tape.hpp"

namespace eclab::ops {

/// c = a * b for a [m x k], b [k x n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// y = x * w + bias, bias [n] added to every row.
template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> bias);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> sub(Var<T> a, Var<T> b);

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

/// Sum of all elements as a [1] tensor.
template <typename T>
Var<T> sum(Var<T> a);

/// x + row, with row [cols] broadcast over every row of x.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> row);

/// Normalizes each row to zero mean and unit variance, then applies
/// gain and bias (both [cols]).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));

/// Row-wise softmax over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(Var<T> x);

/// tanh-approximated GELU.
template <typename T>
Var<T> gelu(Var<T> x);

/// Row-wise x / max(||x||, eps). The backward rule is the unguarded
/// formula evaluated with the clamped norm.
template <typename T>
Var<T> l2_normalize(Var<T> x, T eps = T(1e-12));

/// s[i][j] = cosine(a_i, b_j) for a [N x d], b [M x d].
template <typename T>
Var<T> cosine_similarity_matrix(Var<T> a, Var<T> b, T eps = T(1e-12));

/// Multi-head self-attention over independent sequences.
///
/// q, k, v are [(batch * seq_len) x (num_heads * head_dim)] with the tokens
/// of one sequence stored contiguously. Attention never crosses sequences.
template <typename T>
Var<T> self_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq_len, std::size_t num_heads);

/// Builds a token sequence per row: output row (n * S + s) = slots[s] row n.
/// Every slot is [N x d].
template <typename T>
Var<T> interleave_tokens(const std::vector<Var<T>>& slots);

/// Repeats a [d] row n times into [n x d].
template <typename T>
Var<T> broadcast_rows(Var<T> row, std::size_t n);

/// Extracts token `slot` of every sequence: [(N * S) x d] -> [N x d].
template <typename T>
Var<T> take_token(Var<T> x, std::size_t seq_len, std::size_t slot);

/// Rows with mask[n] != 0 are replaced by `row`; others pass through.
template <typename T>
Var<T> replace_rows(Var<T> x, Var<T> row, std::span<const std::uint8_t> mask);

}  // namespace eclab::ops

namespace eclab {

/// Plain (tape-free) cosine similarity table, used by metrics.
template <typename T>
std::vector<double> cosine_table(const Tensor<T>& a, const Tensor<T>& b);

/// Cosine of two vectors; 0 when either has zero norm.
template <typename T>
double cosine(std::span<const T> a, std::span<const T> b);

}  // namespace eclab
