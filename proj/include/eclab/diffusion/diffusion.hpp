#pragma once

// DDPM machinery for the time-conditioned prior: linear beta schedule,
// forward noising, classifier-free guided clean-sample prediction, the
// posterior step with an eta multiplier on the injected noise, and the
// ancestral sampling loop.
//
// Timesteps are 1-based: t = 1 is the least noisy step and t = T the most.
// alpha_bar(0) is defined as 1, which makes the last step of any strided
// trajectory land exactly on the predicted clean sample.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "eclab/prior/prior_net.hpp"
#include "eclab/rng.hpp"

namespace eclab {

class DiffusionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NoiseSchedule {
  std::size_t steps = 0;                // T
  std::vector<double> beta;             // beta[t - 1]
  std::vector<double> alpha;            // 1 - beta
  std::vector<double> alpha_bar;        // cumulative product of alpha
  std::vector<double> posterior_sigma;  // sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t))

  double beta_at(int t) const;
  double alpha_bar_at(int t) const;  // t in [0, T]
  void check_timestep(int t) const;  // t in [1, T]
};

/// beta_t linearly interpolated from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule make_linear_schedule(std::size_t steps = 1000, double beta_start = 1e-4,
                                   double beta_end = 0.02);

/// z_t = sqrt(abar_t) z_x + sqrt(1 - abar_t) eps, with one timestep per row.
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& z_x, std::span<const int> t,
                   const Tensor<T>& epsilon);

template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& z_x, int t, const Tensor<T>& epsilon);

/// Guided clean-sample prediction:
///   uncond + guidance * (cond - uncond),
/// where the unconditional branch uses the learned null-condition embedding.
/// guidance == 1 returns the conditional forward and guidance == 0 the
/// unconditional one without evaluating the other branch.
template <typename T>
Tensor<T> cfg_predict(const PriorNetwork<T>& net, const Tensor<T>& z_t, int t, const Tensor<T>& z_y,
                      double guidance);

/// One reverse step from timestep t to t_prev (default t - 1):
///   z_prev = c0 * z0_hat + c1 * z_t + eta * sigma * eps
/// with alpha = abar_t / abar_prev, beta = 1 - alpha,
///   c0 = sqrt(abar_prev) beta / (1 - abar_t),
///   c1 = sqrt(alpha) (1 - abar_prev) / (1 - abar_t),
///   sigma^2 = beta (1 - abar_prev) / (1 - abar_t).
/// No noise is added when t_prev == 0; eps may be null in that case or
/// when eta == 0.
template <typename T>
Tensor<T> posterior_step(const NoiseSchedule& schedule, const Tensor<T>& z_t, const Tensor<T>& z0_hat,
                         int t, double eta, const Tensor<T>* epsilon, int t_prev = -1);

struct SamplerOptions {
  std::size_t num_inference_steps = 25;
  double guidance = 4.0;
  double eta = 1.0;
};

/// Evenly spaced decreasing timesteps starting at T: t_i = T - floor(i T / n).
std::vector<int> inference_timesteps(std::size_t total_steps, std::size_t num_inference_steps);

/// Clean-sample predictor used by the loop: (z_t, t) -> z0_hat.
template <typename T>
using Denoiser = std::function<Tensor<T>(const Tensor<T>& z_t, int t)>;

/// Per-step record of the loop: the predicted clean sample at each visited
/// timestep. Used to measure error accumulation along a trajectory.
template <typename T>
struct SampleTrace {
  std::vector<int> timesteps;
  std::vector<Tensor<T>> z0_hat;
};

/// Runs the reverse process from a given z_T. Step noise is drawn from
/// `noise` only when eta > 0 and the step is not the last.
template <typename T>
Tensor<T> sample_from(const Denoiser<T>& denoise, const NoiseSchedule& schedule, Tensor<T> z_T,
                      std::size_t num_inference_steps, double eta, Rng& noise,
                      SampleTrace<T>* trace = nullptr);

/// Full sampler: draws z_T ~ N(0, I) from `seed`, then iterates guided
/// prediction and posterior steps with the same generator.
template <typename T>
Tensor<T> sample_loop(const PriorNetwork<T>& net, const NoiseSchedule& schedule, const Tensor<T>& z_y,
                      const SamplerOptions& options, std::uint64_t seed,
                      SampleTrace<T>* trace = nullptr);

/// ||z0_hat(step) - reference|| averaged over rows, one entry per step.
template <typename T>
std::vector<double> trajectory_deviation(const SampleTrace<T>& trace, const Tensor<T>& reference);

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, Rng& rng);

}  // namespace eclab
