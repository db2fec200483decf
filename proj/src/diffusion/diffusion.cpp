#include "eclab/diffusion/diffusion.hpp"

#include <cmath>

namespace eclab {

double NoiseSchedule::beta_at(int t) const {
  check_timestep(t);
  return beta[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  check_timestep(t);
  return alpha_bar[static_cast<std::size_t>(t) - 1];
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 1 || static_cast<std::size_t>(t) > steps) {
    throw DiffusionError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
}

NoiseSchedule make_linear_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw DiffusionError("schedule needs at least one timestep");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw DiffusionError("need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  s.posterior_sigma.resize(steps);
  double cum = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    const double prev = cum;
    cum *= s.alpha[i];
    s.alpha_bar[i] = cum;
    s.posterior_sigma[i] = std::sqrt(s.beta[i] * (1.0 - prev) / (1.0 - cum));
  }
  return s;
}

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, Rng& rng) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& z_x, std::span<const int> t,
                   const Tensor<T>& epsilon) {
  if (z_x.shape() != epsilon.shape()) throw DiffusionError("q_sample: z_x and epsilon shapes differ");
  if (t.size() != z_x.rows()) throw DiffusionError("q_sample: need one timestep per row");
  Tensor<T> out(z_x.shape());
  const std::size_t d = z_x.cols();
  for (std::size_t r = 0; r < z_x.rows(); ++r) {
    schedule.check_timestep(t[r]);
    const double ab = schedule.alpha_bar_at(t[r]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t c = 0; c < d; ++c) {
      out(r, c) = static_cast<T>(a * static_cast<double>(z_x(r, c)) +
                                 b * static_cast<double>(epsilon(r, c)));
    }
  }
  return out;
}

template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& z_x, int t, const Tensor<T>& epsilon) {
  const std::vector<int> ts(z_x.rows(), t);
  return q_sample(schedule, z_x, std::span<const int>(ts), epsilon);
}

template <typename T>
Tensor<T> cfg_predict(const PriorNetwork<T>& net, const Tensor<T>& z_t, int t, const Tensor<T>& z_y,
                      double guidance) {
  const std::vector<int> ts(z_t.rows(), t);
  if (guidance == 1.0) return predict_diffusion(net, z_t, std::span<const int>(ts), z_y, false);
  auto uncond = predict_diffusion(net, z_t, std::span<const int>(ts), z_y, true);
  if (guidance == 0.0) return uncond;
  const auto cond = predict_diffusion(net, z_t, std::span<const int>(ts), z_y, false);
  const T g = static_cast<T>(guidance);
  for (std::size_t i = 0; i < uncond.numel(); ++i) uncond[i] = uncond[i] + g * (cond[i] - uncond[i]);
  return uncond;
}

template <typename T>
Tensor<T> posterior_step(const NoiseSchedule& schedule, const Tensor<T>& z_t, const Tensor<T>& z0_hat,
                         int t, double eta, const Tensor<T>* epsilon, int t_prev) {
  schedule.check_timestep(t);
  if (t_prev < 0) t_prev = t - 1;
  if (t_prev >= t) throw DiffusionError("posterior_step: t_prev must be smaller than t");
  if (z_t.shape() != z0_hat.shape()) throw DiffusionError("posterior_step: shape mismatch");
  const double ab_t = schedule.alpha_bar_at(t);
  const double ab_prev = schedule.alpha_bar_at(t_prev);
  const double alpha = ab_t / ab_prev;
  const double beta = 1.0 - alpha;
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
  const double c1 = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
  const bool noisy = t_prev > 0 && eta != 0.0;
  double sigma = 0.0;
  if (noisy) {
    if (epsilon == nullptr || epsilon->shape() != z_t.shape()) {
      throw DiffusionError("posterior_step: noise tensor required for a noisy step");
    }
    sigma = eta * std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t));
  }
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = c0 * static_cast<double>(z0_hat[i]) + c1 * static_cast<double>(z_t[i]);
    if (noisy) v += sigma * static_cast<double>((*epsilon)[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

std::vector<int> inference_timesteps(std::size_t total_steps, std::size_t n) {
  if (n < 1 || n > total_steps) {
    throw DiffusionError("num_inference_steps must lie in [1, " + std::to_string(total_steps) + "]");
  }
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<int>(total_steps - (i * total_steps) / n);
  }
  return out;
}

template <typename T>
Tensor<T> sample_from(const Denoiser<T>& denoise, const NoiseSchedule& schedule, Tensor<T> z,
                      std::size_t num_inference_steps, double eta, Rng& noise, SampleTrace<T>* trace) {
  const auto ts = inference_timesteps(schedule.steps, num_inference_steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    auto z0 = denoise(z, t);
    if (trace) {
      trace->timesteps.push_back(t);
      trace->z0_hat.push_back(z0);
    }
    if (t_prev == 0 || eta == 0.0) {
      z = posterior_step<T>(schedule, z, z0, t, eta, nullptr, t_prev);
    } else {
      const auto eps = gaussian_tensor<T>(z.shape(), noise);
      z = posterior_step<T>(schedule, z, z0, t, eta, &eps, t_prev);
    }
  }
  return z;
}

template <typename T>
Tensor<T> sample_loop(const PriorNetwork<T>& net, const NoiseSchedule& schedule, const Tensor<T>& z_y,
                      const SamplerOptions& options, std::uint64_t seed, SampleTrace<T>* trace) {
  if (!net.config().time_conditioned) throw DiffusionError("sample_loop needs a time-conditioned prior");
  Rng rng(seed);
  auto z_T = gaussian_tensor<T>(z_y.shape(), rng);
  const Denoiser<T> denoise = [&](const Tensor<T>& z_t, int t) {
    return cfg_predict(net, z_t, t, z_y, options.guidance);
  };
  return sample_from(denoise, schedule, std::move(z_T), options.num_inference_steps, options.eta, rng,
                     trace);
}

template <typename T>
std::vector<double> trajectory_deviation(const SampleTrace<T>& trace, const Tensor<T>& reference) {
  std::vector<double> out;
  for (const auto& z0 : trace.z0_hat) {
    if (z0.shape() != reference.shape()) throw DiffusionError("trajectory_deviation: shape mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < z0.rows(); ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < z0.cols(); ++c) {
        const double d = static_cast<double>(z0(r, c)) - static_cast<double>(reference(r, c));
        ss += d * d;
      }
      total += std::sqrt(ss);
    }
    out.push_back(total / static_cast<double>(z0.rows()));
  }
  return out;
}

#define ECLAB_INSTANTIATE_DIFFUSION(T)                                                          \
  template Tensor<T> gaussian_tensor<T>(Shape, Rng&);                                           \
  template Tensor<T> q_sample<T>(const NoiseSchedule&, const Tensor<T>&, std::span<const int>,  \
                                 const Tensor<T>&);                                             \
  template Tensor<T> q_sample<T>(const NoiseSchedule&, const Tensor<T>&, int, const Tensor<T>&); \
  template Tensor<T> cfg_predict<T>(const PriorNetwork<T>&, const Tensor<T>&, int,              \
                                    const Tensor<T>&, double);                                  \
  template Tensor<T> posterior_step<T>(const NoiseSchedule&, const Tensor<T>&, const Tensor<T>&, \
                                       int, double, const Tensor<T>*, int);                     \
  template Tensor<T> sample_from<T>(const Denoiser<T>&, const NoiseSchedule&, Tensor<T>,        \
                                    std::size_t, double, Rng&, SampleTrace<T>*);                \
  template Tensor<T> sample_loop<T>(const PriorNetwork<T>&, const NoiseSchedule&,               \
                                    const Tensor<T>&, const SamplerOptions&, std::uint64_t,     \
                                    SampleTrace<T>*);                                           \
  template std::vector<double> trajectory_deviation<T>(const SampleTrace<T>&, const Tensor<T>&);

ECLAB_INSTANTIATE_DIFFUSION(float)
ECLAB_INSTANTIATE_DIFFUSION(double)

#undef ECLAB_INSTANTIATE_DIFFUSION

}  // namespace eclab
