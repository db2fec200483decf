#include "eclab/prior/prior_net.hpp"

#include <cmath>

namespace eclab {

namespace {

constexpr double kInitStd = 0.02;

PriorIndex build_index(const PriorConfig& c) {
  PriorIndex idx;
  std::size_t i = 0;
  idx.text_w = i++;
  idx.text_b = i++;
  idx.input_w = i++;
  idx.input_b = i++;
  if (c.time_conditioned) {
    idx.time_w = i++;
    idx.time_b = i++;
  }
  for (std::size_t s = 0; s < c.seq_len(); ++s) idx.positions.push_back(i++);
  idx.query = i++;
  idx.null_condition = i++;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    BlockIndex b{};
    b.ln1_gain = i++;
    b.ln1_bias = i++;
    b.wq = i++;
    b.bq = i++;
    b.wk = i++;
    b.bk = i++;
    b.wv = i++;
    b.bv = i++;
    b.wo = i++;
    b.bo = i++;
    b.ln2_gain = i++;
    b.ln2_bias = i++;
    b.ff1_w = i++;
    b.ff1_b = i++;
    b.ff2_w = i++;
    b.ff2_b = i++;
    idx.blocks.push_back(b);
  }
  idx.final_gain = i++;
  idx.final_bias = i++;
  idx.out_w = i++;
  idx.out_b = i++;
  return idx;
}

}  // namespace

void PriorConfig::validate() const {
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0 || head_dim == 0) {
    throw PriorError("prior dimensions must be positive");
  }
  if (embed_dim % 2 != 0) throw PriorError("embed_dim must be even for sinusoidal time features");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw PriorError("dropout must lie in [0, 1)");
  if (time_conditioned && max_timesteps == 0) throw PriorError("max_timesteps must be positive");
}

PriorConfig PriorConfig::desk(bool time_conditioned) {
  PriorConfig c;
  c.time_conditioned = time_conditioned;
  return c;
}

PriorConfig PriorConfig::paper_scale(bool time_conditioned) {
  PriorConfig c;
  c.embed_dim = 768;
  c.num_layers = 10;
  c.num_heads = 16;
  c.head_dim = 32;
  c.time_conditioned = time_conditioned;
  return c;
}

std::vector<ParamSpec> parameter_layout(const PriorConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, w = c.attention_width(), f = c.ff_width();
  std::vector<ParamSpec> out;
  out.push_back({"text_proj.weight", {d, d}, InitKind::normal});
  out.push_back({"text_proj.bias", {d}, InitKind::zeros});
  out.push_back({"input_proj.weight", {d, d}, InitKind::normal});
  out.push_back({"input_proj.bias", {d}, InitKind::zeros});
  if (c.time_conditioned) {
    out.push_back({"time_proj.weight", {d, d}, InitKind::normal});
    out.push_back({"time_proj.bias", {d}, InitKind::zeros});
  }
  for (std::size_t s = 0; s < c.seq_len(); ++s) {
    out.push_back({"position." + std::to_string(s), {d}, InitKind::normal});
  }
  out.push_back({"query", {d}, InitKind::normal});
  out.push_back({"null_condition", {d}, InitKind::zeros});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm.gain", {d}, InitKind::ones});
    out.push_back({p + "attn_norm.bias", {d}, InitKind::zeros});
    out.push_back({p + "attn.q.weight", {d, w}, InitKind::normal});
    out.push_back({p + "attn.q.bias", {w}, InitKind::zeros});
    out.push_back({p + "attn.k.weight", {d, w}, InitKind::normal});
    out.push_back({p + "attn.k.bias", {w}, InitKind::zeros});
    out.push_back({p + "attn.v.weight", {d, w}, InitKind::normal});
    out.push_back({p + "attn.v.bias", {w}, InitKind::zeros});
    out.push_back({p + "attn.out.weight", {w, d}, InitKind::residual_out});
    out.push_back({p + "attn.out.bias", {d}, InitKind::zeros});
    out.push_back({p + "ff_norm.gain", {d}, InitKind::ones});
    out.push_back({p + "ff_norm.bias", {d}, InitKind::zeros});
    out.push_back({p + "ff.in.weight", {d, f}, InitKind::normal});
    out.push_back({p + "ff.in.bias", {f}, InitKind::zeros});
    out.push_back({p + "ff.out.weight", {f, d}, InitKind::residual_out});
    out.push_back({p + "ff.out.bias", {d}, InitKind::zeros});
  }
  out.push_back({"final_norm.gain", {d}, InitKind::ones});
  out.push_back({"final_norm.bias", {d}, InitKind::zeros});
  out.push_back({"out_proj.weight", {d, d}, InitKind::normal});
  out.push_back({"out_proj.bias", {d}, InitKind::zeros});
  return out;
}

std::size_t parameter_count(const PriorConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, w = c.attention_width(), L = c.num_layers, S = c.seq_len();
  const std::size_t per_layer =
      4 * d + 3 * (d * w + w) + (w * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d);
  std::size_t total = L * per_layer + 2 * (d * d + d) + S * d + d + d + 2 * d + (d * d + d);
  if (c.time_conditioned) total += d * d + d;
  return total;
}

template <typename T>
PriorNetwork<T> PriorNetwork<T>::init(const PriorConfig& config, std::uint64_t seed) {
  const auto layout = parameter_layout(config);
  Rng rng(seed);
  const double residual_std = kInitStd / std::sqrt(static_cast<double>(config.num_layers));
  std::vector<NamedTensor<T>> params;
  params.reserve(layout.size());
  for (const auto& spec : layout) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case InitKind::normal:
        for (auto& v : t.data()) v = static_cast<T>(kInitStd * rng.normal());
        break;
      case InitKind::residual_out:
        for (auto& v : t.data()) v = static_cast<T>(residual_std * rng.normal());
        break;
      case InitKind::ones:
        for (auto& v : t.data()) v = T(1);
        break;
      case InitKind::zeros:
        break;
    }
    params.push_back({spec.name, std::move(t)});
  }
  return from_params(config, std::move(params));
}

template <typename T>
PriorNetwork<T> PriorNetwork<T>::from_params(const PriorConfig& config,
                                             std::vector<NamedTensor<T>> params) {
  const auto layout = parameter_layout(config);
  if (params.size() != layout.size()) {
    throw PriorError("expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].name != layout[i].name || params[i].value.shape() != layout[i].shape) {
      throw PriorError("parameter " + std::to_string(i) + " is '" + params[i].name + "' " +
                       shape_string(params[i].value.shape()) + ", expected '" + layout[i].name +
                       "' " + shape_string(layout[i].shape));
    }
  }
  PriorNetwork net;
  net.config_ = config;
  net.index_ = build_index(config);
  net.params_ = std::move(params);
  return net;
}

template <typename T>
std::size_t PriorNetwork<T>::allocated_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
bool PriorNetwork<T>::same_parameters(const PriorNetwork& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        !params_[i].value.same_values(other.params_[i].value)) {
      return false;
    }
  }
  return true;
}

template <typename T>
BoundPrior<T> bind(Tape<T>& tape, const PriorNetwork<T>& net, bool requires_grad) {
  BoundPrior<T> b;
  b.net = &net;
  b.params.reserve(net.params().size());
  for (const auto& p : net.params()) b.params.push_back(tape.leaf(p.value, requires_grad));
  return b;
}

std::vector<double> sinusoidal_features(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw PriorError("time feature dimension must be positive and even");
  if (t < 0.0) throw PriorError("timestep must be nonnegative");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

template <typename T>
Var<T> apply_condition_dropout(const BoundPrior<T>& net, Var<T> z_y, std::span<const std::uint8_t> mask) {
  return ops::replace_rows(z_y, net.at(net.net->index().null_condition), mask);
}

namespace {

template <typename T>
Var<T> maybe_dropout(Var<T> x, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  Tensor<T> mask(x.shape());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.data()) m = rng->bernoulli(p) ? T(0) : keep;
  return ops::mul(x, x.tape->constant(std::move(mask)));
}

template <typename T>
Var<T> run_transformer(const BoundPrior<T>& net, std::vector<Var<T>> slots, Rng* dropout_rng) {
  const auto& cfg = net.net->config();
  const auto& idx = net.net->index();
  const std::size_t S = cfg.seq_len();
  for (std::size_t s = 0; s < S; ++s) slots[s] = ops::add_row(slots[s], net.at(idx.positions[s]));
  Var<T> x = ops::interleave_tokens(slots);
  for (const auto& b : idx.blocks) {
    auto h = ops::layer_norm(x, net.at(b.ln1_gain), net.at(b.ln1_bias));
    auto q = ops::affine(h, net.at(b.wq), net.at(b.bq));
    auto k = ops::affine(h, net.at(b.wk), net.at(b.bk));
    auto v = ops::affine(h, net.at(b.wv), net.at(b.bv));
    auto a = ops::self_attention(q, k, v, S, cfg.num_heads);
    auto o = ops::affine(a, net.at(b.wo), net.at(b.bo));
    x = ops::add(x, maybe_dropout(o, cfg.dropout, dropout_rng));
    auto f = ops::layer_norm(x, net.at(b.ln2_gain), net.at(b.ln2_bias));
    f = ops::gelu(ops::affine(f, net.at(b.ff1_w), net.at(b.ff1_b)));
    f = ops::affine(f, net.at(b.ff2_w), net.at(b.ff2_b));
    x = ops::add(x, maybe_dropout(f, cfg.dropout, dropout_rng));
  }
  x = ops::layer_norm(x, net.at(idx.final_gain), net.at(idx.final_bias));
  auto out = ops::take_token(x, S, S - 1);
  return ops::affine(out, net.at(idx.out_w), net.at(idx.out_b));
}

template <typename T>
void check_pair(const Var<T>& a, const Var<T>& z_y, std::size_t d, const char* what) {
  if (a.value().rank() != 2 || a.shape() != z_y.shape() || a.value().cols() != d) {
    throw PriorError(std::string(what) + ": inputs must both be [N x " + std::to_string(d) +
                     "], got " + shape_string(a.shape()) + " and " + shape_string(z_y.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> forward_prior(const BoundPrior<T>& net, Var<T> epsilon, Var<T> z_y, Rng* dropout_rng) {
  const auto& cfg = net.net->config();
  if (cfg.time_conditioned) throw PriorError("forward_prior needs a time-independent network");
  check_pair(epsilon, z_y, cfg.embed_dim, "forward_prior");
  const auto& idx = net.net->index();
  const std::size_t n = z_y.value().rows();
  std::vector<Var<T>> slots{
      ops::affine(z_y, net.at(idx.text_w), net.at(idx.text_b)),
      ops::affine(epsilon, net.at(idx.input_w), net.at(idx.input_b)),
      ops::broadcast_rows(net.at(idx.query), n),
  };
  return run_transformer(net, std::move(slots), dropout_rng);
}

template <typename T>
Var<T> forward_diffusion(const BoundPrior<T>& net, Var<T> z_t, std::span<const int> t, Var<T> z_y,
                         Rng* dropout_rng) {
  const auto& cfg = net.net->config();
  if (!cfg.time_conditioned) throw PriorError("forward_diffusion needs a time-conditioned network");
  check_pair(z_t, z_y, cfg.embed_dim, "forward_diffusion");
  const std::size_t n = z_y.value().rows(), d = cfg.embed_dim;
  if (t.size() != n) {
    throw PriorError("forward_diffusion: " + std::to_string(t.size()) + " timesteps for " +
                     std::to_string(n) + " rows");
  }
  Tensor<T> features(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) {
    if (t[r] < 1 || static_cast<std::size_t>(t[r]) > cfg.max_timesteps) {
      throw PriorError("timestep " + std::to_string(t[r]) + " outside [1, " +
                       std::to_string(cfg.max_timesteps) + "]");
    }
    const auto f = sinusoidal_features(static_cast<double>(t[r]), d);
    for (std::size_t c = 0; c < d; ++c) features(r, c) = static_cast<T>(f[c]);
  }
  const auto& idx = net.net->index();
  auto time_in = net.tape().constant(std::move(features));
  std::vector<Var<T>> slots{
      ops::affine(z_y, net.at(idx.text_w), net.at(idx.text_b)),
      ops::affine(z_t, net.at(idx.input_w), net.at(idx.input_b)),
      ops::affine(time_in, net.at(idx.time_w), net.at(idx.time_b)),
      ops::broadcast_rows(net.at(idx.query), n),
  };
  return run_transformer(net, std::move(slots), dropout_rng);
}

template <typename T>
Tensor<T> predict_prior(const PriorNetwork<T>& net, const Tensor<T>& epsilon, const Tensor<T>& z_y) {
  Tape<T> tape;
  const auto bound = bind(tape, net, false);
  return forward_prior(bound, tape.constant(epsilon), tape.constant(z_y)).value();
}

template <typename T>
Tensor<T> predict_diffusion(const PriorNetwork<T>& net, const Tensor<T>& z_t, std::span<const int> t,
                            const Tensor<T>& z_y, bool unconditional) {
  Tape<T> tape;
  const auto bound = bind(tape, net, false);
  auto cond = tape.constant(z_y);
  if (unconditional) {
    const std::vector<std::uint8_t> all(z_y.rows(), 1);
    cond = apply_condition_dropout(bound, cond, all);
  }
  return forward_diffusion(bound, tape.constant(z_t), t, cond).value();
}

#define ECLAB_INSTANTIATE_PRIOR(T)                                                              \
  template class PriorNetwork<T>;                                                               \
  template BoundPrior<T> bind<T>(Tape<T>&, const PriorNetwork<T>&, bool);                       \
  template Var<T> apply_condition_dropout<T>(const BoundPrior<T>&, Var<T>,                      \
                                             std::span<const std::uint8_t>);                    \
  template Var<T> forward_prior<T>(const BoundPrior<T>&, Var<T>, Var<T>, Rng*);                 \
  template Var<T> forward_diffusion<T>(const BoundPrior<T>&, Var<T>, std::span<const int>,      \
                                       Var<T>, Rng*);                                           \
  template Tensor<T> predict_prior<T>(const PriorNetwork<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> predict_diffusion<T>(const PriorNetwork<T>&, const Tensor<T>&,             \
                                          std::span<const int>, const Tensor<T>&, bool);

ECLAB_INSTANTIATE_PRIOR(float)
ECLAB_INSTANTIATE_PRIOR(double)

#undef ECLAB_INSTANTIATE_PRIOR

}  // namespace eclab
