#include "eclab/objectives/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "eclab/gradcore/ops.hpp"

namespace eclab {

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw LossError("tau must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw LossError("lambda must be nonnegative");
}

namespace {

template <typename T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw LossError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
  }
}

template <typename T>
struct Normalized {
  std::vector<T> unit;
  std::vector<T> norm;
};

template <typename T>
Normalized<T> normalize(const Tensor<T>& x) {
  constexpr T eps = T(1e-12);
  const std::size_t n = x.rows(), d = x.cols();
  Normalized<T> out{std::vector<T>(n * d), std::vector<T>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += x(r, c) * x(r, c);
    out.norm[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < d; ++c) out.unit[r * d + c] = x(r, c) / out.norm[r];
  }
  return out;
}

// Softmax probabilities of every row of logits s/tau (+ offset) and the loss.
template <typename T>
double contrastive_forward(const Normalized<T>& p, const Normalized<T>& y, std::size_t n,
                           std::size_t d, double tau, std::span<const double> offsets,
                           std::vector<double>* probs) {
  std::vector<double> logits(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t c = 0; c < d; ++c) s += p.unit[i * d + c] * y.unit[j * d + c];
      logits[j] = static_cast<double>(s) / tau + (offsets.empty() ? 0.0 : offsets[i]);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(logits[j] - mx);
    total += std::log(sum) - (logits[i] - mx);
    if (probs) {
      for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] = std::exp(logits[j] - mx) / sum;
    }
  }
  return total / static_cast<double>(n);
}

// dx += (g - u (u . g)) / norm
template <typename T>
void unit_backward(const Normalized<T>& x, std::span<const T> g, std::span<T> dx, std::size_t n,
                   std::size_t d) {
  for (std::size_t r = 0; r < n; ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < d; ++c) dot += x.unit[r * d + c] * g[r * d + c];
    for (std::size_t c = 0; c < d; ++c) {
      dx[r * d + c] += (g[r * d + c] - x.unit[r * d + c] * dot) / x.norm[r];
    }
  }
}

}  // namespace

template <typename T>
LossValue<T> proj_loss(Var<T> prediction, Var<T> z_x) {
  const auto& p = prediction.value();
  const auto& z = z_x.value();
  check_pair(p, z, "proj_loss");
  const std::size_t n = p.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double diff = static_cast<double>(p[i]) - static_cast<double>(z[i]);
    total += diff * diff;
  }
  const double value = total / static_cast<double>(n);
  auto node = prediction.tape->record(
      Tensor<T>::scalar(static_cast<T>(value)), {prediction, z_x},
      [prediction, z_x, n](Tape<T>& tape, std::size_t self) {
        const T g = tape.upstream(self)[0] * T(2) / static_cast<T>(n);
        const auto pv = prediction.value().data();
        const auto zv = z_x.value().data();
        if (auto dp = tape.sink(prediction); !dp.empty())
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g * (pv[i] - zv[i]);
        if (auto dz = tape.sink(z_x); !dz.empty())
          for (std::size_t i = 0; i < dz.size(); ++i) dz[i] -= g * (pv[i] - zv[i]);
      });
  return {node, value};
}

template <typename T>
LossValue<T> contrastive_loss(Var<T> prediction, Var<T> z_y, double tau) {
  if (!(tau > 0.0)) throw LossError("contrastive_loss: tau must be positive");
  const auto& pv = prediction.value();
  const auto& yv = z_y.value();
  check_pair(pv, yv, "contrastive_loss");
  const std::size_t n = pv.rows(), d = pv.cols();
  auto p = std::make_shared<Normalized<T>>(normalize(pv));
  auto y = std::make_shared<Normalized<T>>(normalize(yv));
  auto probs = std::make_shared<std::vector<double>>(n * n);
  const double value = contrastive_forward(*p, *y, n, d, tau, {}, probs.get());
  auto node = prediction.tape->record(
      Tensor<T>::scalar(static_cast<T>(value)), {prediction, z_y},
      [prediction, z_y, p, y, probs, n, d, tau](Tape<T>& tape, std::size_t self) {
        const double up = static_cast<double>(tape.upstream(self)[0]);
        // dL/ds_ij = (p_ij - [i == j]) / (N tau)
        std::vector<T> ds(n * n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            ds[i * n + j] = static_cast<T>(up * ((*probs)[i * n + j] - (i == j ? 1.0 : 0.0)) /
                                           (static_cast<double>(n) * tau));
        if (auto dp = tape.sink(prediction); !dp.empty()) {
          std::vector<T> gu(n * d, T(0));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t c = 0; c < d; ++c) gu[i * d + c] += ds[i * n + j] * y->unit[j * d + c];
          unit_backward<T>(*p, gu, dp, n, d);
        }
        if (auto dy = tape.sink(z_y); !dy.empty()) {
          std::vector<T> gu(n * d, T(0));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t c = 0; c < d; ++c) gu[j * d + c] += ds[i * n + j] * p->unit[i * d + c];
          unit_backward<T>(*y, gu, dy, n, d);
        }
      });
  return {node, value};
}

template <typename T>
double contrastive_loss_value(const Tensor<T>& prediction, const Tensor<T>& z_y, double tau,
                              std::span<const double> row_offsets) {
  if (!(tau > 0.0)) throw LossError("contrastive_loss: tau must be positive");
  check_pair(prediction, z_y, "contrastive_loss");
  if (!row_offsets.empty() && row_offsets.size() != prediction.rows()) {
    throw LossError("contrastive_loss: one offset per row required");
  }
  const auto p = normalize(prediction);
  const auto y = normalize(z_y);
  return contrastive_forward(p, y, prediction.rows(), prediction.cols(), tau, row_offsets, nullptr);
}

template <typename T>
EclipseLoss<T> eclipse_loss(Var<T> prediction, Var<T> z_x, Var<T> z_y, const LossConfig& config) {
  config.validate();
  const auto proj = proj_loss(prediction, z_x);
  const auto cls = contrastive_loss(prediction, z_y, config.tau);
  EclipseLoss<T> out;
  out.total = ops::add(proj.node, ops::scale(cls.node, static_cast<T>(config.lambda)));
  out.proj = proj.value;
  out.cls = cls.value;
  out.total_value = proj.value + config.lambda * cls.value;
  return out;
}

template <typename T>
LossValue<T> diffusion_prior_loss(const BoundPrior<T>& net, const Tensor<T>& z_x, Var<T> z_y,
                                  std::span<const int> t, const Tensor<T>& epsilon,
                                  const NoiseSchedule& schedule,
                                  std::span<const std::uint8_t> dropout_mask) {
  check_pair(z_x, z_y.value(), "diffusion_prior_loss");
  auto& tape = net.tape();
  const auto z_t = q_sample(schedule, z_x, t, epsilon);
  auto cond = z_y;
  if (!dropout_mask.empty()) cond = apply_condition_dropout(net, z_y, dropout_mask);
  auto pred = forward_diffusion(net, tape.constant(z_t), t, cond);
  return proj_loss(pred, tape.constant(z_x));
}

#define ECLAB_INSTANTIATE_LOSSES(T)                                                             \
  template LossValue<T> proj_loss<T>(Var<T>, Var<T>);                                           \
  template LossValue<T> contrastive_loss<T>(Var<T>, Var<T>, double);                            \
  template EclipseLoss<T> eclipse_loss<T>(Var<T>, Var<T>, Var<T>, const LossConfig&);           \
  template LossValue<T> diffusion_prior_loss<T>(const BoundPrior<T>&, const Tensor<T>&, Var<T>, \
                                                std::span<const int>, const Tensor<T>&,         \
                                                const NoiseSchedule&,                           \
                                                std::span<const std::uint8_t>);                 \
  template double contrastive_loss_value<T>(const Tensor<T>&, const Tensor<T>&, double,         \
                                            std::span<const double>);

ECLAB_INSTANTIATE_LOSSES(float)
ECLAB_INSTANTIATE_LOSSES(double)

#undef ECLAB_INSTANTIATE_LOSSES

}  // namespace eclab
