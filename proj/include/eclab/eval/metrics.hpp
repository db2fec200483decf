#pragma once

// Latent-space evaluation: retrieval accuracy against concept prototypes,
// cosine alignment and squared error against ground-truth vision
// embeddings, and the spread of predictions across input-noise draws.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "eclab/diffusion/diffusion.hpp"
#include "eclab/prior/prior_net.hpp"
#include "eclab/world/latent_world.hpp"

namespace eclab {

enum class Strategy { projection, diffusion, eclipse };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

/// Fraction of rows whose highest-cosine candidate is the truth index.
/// Ties resolve to the lowest candidate index.
template <typename T>
double retrieval_top1(const Tensor<T>& predictions, const Tensor<T>& candidates,
                      std::span<const std::size_t> truth_index);

/// Batch mean of the per-row cosine.
template <typename T>
double mean_cosine(const Tensor<T>& predictions, const Tensor<T>& targets);

/// Batch mean of the per-row summed squared error.
template <typename T>
double latent_mse(const Tensor<T>& predictions, const Tensor<T>& targets);

/// (z_y, draw_seed) -> predictions
using DrawPredictor = std::function<Tensor<float>(const Tensor<float>& z_y, std::uint64_t draw_seed)>;

/// Mean over prompts of the average pairwise (1 - cosine) among k draws.
double diversity_spread(const DrawPredictor& predict, const Tensor<float>& z_y, std::size_t k_draws,
                        std::uint64_t seed);

enum class EpsilonMode { sampled, zero };

struct EvalOptions {
  EpsilonMode epsilon_mode = EpsilonMode::sampled;
  std::size_t inference_steps = 25;
  double guidance = 4.0;
  double eta = 1.0;
  std::uint64_t seed = 1234;
  std::size_t max_samples = 512;   // per split; 0 = all
  std::size_t diversity_draws = 4;
  std::size_t diversity_prompts = 64;

  bool operator==(const EvalOptions&) const = default;
};

/// Predicts z_x for a batch of text embeddings. Time-independent networks
/// take eps ~ N(0, I) from `seed` (or eps = 0); diffusion networks run the
/// guided sampler with z_T drawn from `seed`.
Tensor<float> predict_embeddings(const PriorNetwork<float>& net, const Tensor<float>& z_y,
                                 const EvalOptions& options, const NoiseSchedule* schedule,
                                 std::uint64_t seed);

struct EvalMetrics {
  double top1_seen = 0.0;
  double top1_holdout = 0.0;
  double mean_cosine = 0.0;   // over all evaluated rows of both parts
  double latent_mse = 0.0;
  double diversity_spread = 0.0;
};

/// Evaluates a network on the eval parts of a split. Seen and holdout
/// rows use fixed sub-seeds of options.seed so different networks see
/// identical input noise and initial latents.
EvalMetrics evaluate(const World& world, const DatasetSplit& split, const PriorNetwork<float>& net,
                     const EvalOptions& options, const NoiseSchedule* schedule,
                     bool with_diversity = true);

}  // namespace eclab
