#pragma once

// Compact transformer prior mapping a text embedding (plus an input-noise or
// noised-latent token, and a timestep token in diffusion mode) to a
// predicted vision embedding.
//
// Token layout per sample:
//   time-independent: [text, noise, query]
//   time-conditioned: [text, noised latent, time, query]
// The prediction is read from the query token after the final layer norm.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclab/gradcore/ops.hpp"
#include "eclab/rng.hpp"

namespace eclab {

class PriorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PriorConfig {
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t head_dim = 8;
  double dropout = 0.0;
  bool time_conditioned = false;
  std::size_t max_timesteps = 1000;

  std::size_t attention_width() const { return num_heads * head_dim; }
  std::size_t ff_width() const { return 4 * embed_dim; }
  std::size_t seq_len() const { return time_conditioned ? 4 : 3; }
  void validate() const;

  bool operator==(const PriorConfig&) const = default;

  /// embed 32, 2 layers, 4 heads of width 8.
  static PriorConfig desk(bool time_conditioned);
  /// embed 768, 10 layers, 16 heads of width 32.
  static PriorConfig paper_scale(bool time_conditioned);
};

enum class InitKind { normal, residual_out, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
};

/// Parameter names, shapes and init schemes in declaration order.
std::vector<ParamSpec> parameter_layout(const PriorConfig& config);

/// Closed-form parameter total. With d = embed_dim, w = heads * head_dim,
/// L = layers, S = token slots:
///   per layer   4d (two norms) + 3(dw + w) (q,k,v) + (wd + d) (out)
///               + (4d^2 + 4d) + (4d^2 + d) (feed-forward)
///   globals     2(d^2 + d) (text/noise input maps) + S d (positions)
///               + d (query) + d (null condition) + 2d (final norm)
///               + (d^2 + d) (output map)
///   time branch (d^2 + d) when time-conditioned (the extra position is in S d)
std::size_t parameter_count(const PriorConfig& config);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Indices into the parameter list for the pieces of one block.
struct BlockIndex {
  std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
};

struct PriorIndex {
  std::size_t text_w, text_b, input_w, input_b;
  std::size_t time_w = 0, time_b = 0;
  std::vector<std::size_t> positions;
  std::size_t query, null_condition;
  std::vector<BlockIndex> blocks;
  std::size_t final_gain, final_bias, out_w, out_b;
};

template <typename T>
class PriorNetwork {
 public:
  /// Seeded initialization: N(0, 0.02) for projections, embeddings and
  /// positions; residual output maps scaled by 1/sqrt(num_layers); zero
  /// biases; unit norm gains; zero null-condition embedding.
  static PriorNetwork init(const PriorConfig& config, std::uint64_t seed);

  /// Wraps existing tensors; names and shapes must match the layout.
  static PriorNetwork from_params(const PriorConfig& config, std::vector<NamedTensor<T>> params);

  const PriorConfig& config() const { return config_; }
  const PriorIndex& index() const { return index_; }
  std::vector<NamedTensor<T>>& params() { return params_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }

  std::size_t allocated_parameters() const;
  const Tensor<T>& null_embedding() const { return params_[index_.null_condition].value; }

  template <typename U>
  PriorNetwork<U> cast() const {
    std::vector<NamedTensor<U>> out;
    for (const auto& p : params_) out.push_back({p.name, p.value.template cast<U>()});
    return PriorNetwork<U>::from_params(config_, std::move(out));
  }

  bool same_parameters(const PriorNetwork& other) const;

 private:
  PriorConfig config_;
  PriorIndex index_{};
  std::vector<NamedTensor<T>> params_;
};

/// Network parameters recorded on one tape.
template <typename T>
struct BoundPrior {
  const PriorNetwork<T>* net = nullptr;
  std::vector<Var<T>> params;

  Var<T> at(std::size_t i) const { return params[i]; }
  Tape<T>& tape() const { return *params.front().tape; }
};

template <typename T>
BoundPrior<T> bind(Tape<T>& tape, const PriorNetwork<T>& net, bool requires_grad);

/// Sinusoidal timestep features before the learned projection: the first
/// half sin(t f_i), the second half cos(t f_i), f_i = 10000^(-i / (dim/2)).
std::vector<double> sinusoidal_features(double t, std::size_t dim);

/// Rows with mask[n] set are replaced by the learned null-condition embedding.
template <typename T>
Var<T> apply_condition_dropout(const BoundPrior<T>& net, Var<T> z_y, std::span<const std::uint8_t> mask);

/// Time-independent prediction g(eps, z_y).
template <typename T>
Var<T> forward_prior(const BoundPrior<T>& net, Var<T> epsilon, Var<T> z_y, Rng* dropout_rng = nullptr);

/// Time-conditioned sample prediction g(z_t, t, z_y); predicts the clean z_x.
template <typename T>
Var<T> forward_diffusion(const BoundPrior<T>& net, Var<T> z_t, std::span<const int> t, Var<T> z_y,
                         Rng* dropout_rng = nullptr);

/// Tape-free inference helpers.
template <typename T>
Tensor<T> predict_prior(const PriorNetwork<T>& net, const Tensor<T>& epsilon, const Tensor<T>& z_y);

template <typename T>
Tensor<T> predict_diffusion(const PriorNetwork<T>& net, const Tensor<T>& z_t, std::span<const int> t,
                            const Tensor<T>& z_y, bool unconditional = false);

}  // namespace eclab
