#pragma once

// Training objectives for the prior.
//
//   projection   mean_i || z_x^i - zhat^i ||^2
//   contrastive  -(1/N) sum_i log softmax_j(<zhat^i, z_y^j> / tau)[i]
//   combined     projection + lambda * contrastive
//   diffusion    projection error of the time-conditioned clean-sample
//                prediction from z_t ~ q(t, z_x)
//
// Squared errors are summed over embedding dimensions and averaged over the
// batch. Similarities are cosines at the working precision; the
// log-sum-exp and the batch reduction run in double.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "eclab/diffusion/diffusion.hpp"
#include "eclab/gradcore/tape.hpp"
#include "eclab/prior/prior_net.hpp"

namespace eclab {

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LossConfig {
  double lambda = 0.2;
  double tau = 0.07;
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// A differentiable scalar plus its value accumulated in double.
template <typename T>
struct LossValue {
  Var<T> node;
  double value = 0.0;
};

template <typename T>
struct EclipseLoss {
  Var<T> total;
  double total_value = 0.0;
  double proj = 0.0;
  double cls = 0.0;
};

template <typename T>
LossValue<T> proj_loss(Var<T> prediction, Var<T> z_x);

template <typename T>
LossValue<T> contrastive_loss(Var<T> prediction, Var<T> z_y, double tau);

template <typename T>
EclipseLoss<T> eclipse_loss(Var<T> prediction, Var<T> z_x, Var<T> z_y, const LossConfig& config);

/// Forms z_t = q_sample(z_x, t, eps), optionally swaps masked conditions
/// for the null embedding, and scores the network's clean-sample prediction.
template <typename T>
LossValue<T> diffusion_prior_loss(const BoundPrior<T>& net, const Tensor<T>& z_x, Var<T> z_y,
                                  std::span<const int> t, const Tensor<T>& epsilon,
                                  const NoiseSchedule& schedule,
                                  std::span<const std::uint8_t> dropout_mask = {});

/// Tape-free value of the contrastive loss. `row_offsets`, when given, adds
/// a constant to every logit of row i (exercises shift invariance).
template <typename T>
double contrastive_loss_value(const Tensor<T>& prediction, const Tensor<T>& z_y, double tau,
                              std::span<const double> row_offsets = {});

}  // namespace eclab
