#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclab/diffusion/diffusion.hpp"
#include "eclab/eval/metrics.hpp"
#include "eclab/objectives/losses.hpp"
#include "eclab/prior/prior_net.hpp"
#include "eclab/rng.hpp"
#include "eclab/world/latent_world.hpp"

namespace eclab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when training produces a non-finite loss or gradient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SchedulerConfig {
  std::size_t T0 = 1000;
  std::size_t T_mult = 1;
  double min_lr = 1e-6;
  bool operator==(const SchedulerConfig&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct DiffusionConfig {
  std::size_t timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  bool operator==(const DiffusionConfig&) const = default;
  NoiseSchedule schedule() const { return make_linear_schedule(timesteps, beta_start, beta_end); }
};

struct TrainConfig {
  Strategy strategy = Strategy::eclipse;
  std::size_t iterations = 3000;
  std::size_t batch_size = 64;
  double base_lr = 5e-5;
  LossConfig loss;
  double cond_dropout_prob = 0.10;
  SchedulerConfig scheduler;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t eval_every = 200;
  double grad_clip = 0.0;  // global-norm threshold; 0 disables
  DiffusionConfig diffusion;
  EvalOptions eval;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;

  static TrainConfig desk();
  static TrainConfig paper();
};

/// Checks that the prior matches the strategy (time conditioning iff
/// diffusion) and the diffusion horizon.
void check_compatible(const PriorConfig& prior, const TrainConfig& train);

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  bool operator==(const AdamState&) const = default;
};

AdamState make_adam_state(const PriorNetwork<float>& net);

/// One bias-corrected Adam update of every parameter. Per-element
/// arithmetic runs in double and is stored back in float.
void adam_step(std::vector<NamedTensor<float>>& params, const std::vector<std::vector<float>>& grads,
               AdamState& state, double lr, const AdamConfig& config = {});

/// Cosine annealing with warm restarts.
double warm_restart_lr(std::size_t step, double base_lr, std::size_t T0, std::size_t T_mult, double min_lr);

std::vector<std::uint8_t> condition_dropout_mask(std::size_t batch_size, double prob, Rng& rng);

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_proj = 0.0;
  double loss_cls = 0.0;
  double eval_top1_seen = 0.0;
  double eval_top1_holdout = 0.0;
  double eval_cosine = 0.0;
  bool operator==(const MetricsRow&) const = default;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

struct TrainState {
  std::size_t step = 0;
  AdamState adam;
  Rng rng;
  std::optional<MetricsRow> last;
  std::optional<MetricsRow> best;  // by eval_top1_holdout, then seen
  bool operator==(const TrainState&) const = default;
};

TrainState initial_state(const PriorNetwork<float>& net, const TrainConfig& config);

struct StepLoss {
  double total = 0.0;
  double proj = 0.0;
  double cls = 0.0;
};

/// Forward, backward and update for one batch. Advances state.step.
StepLoss train_step(const DatasetSplit& data, PriorNetwork<float>& net, TrainState& state,
                    const TrainConfig& config, const NoiseSchedule* schedule);

struct TrainResult {
  PriorNetwork<float> net;
  TrainState state;
  std::vector<MetricsRow> log;
  std::vector<double> loss_history;  // total loss of every step run here
};

using RowSink = std::function<void(const MetricsRow&)>;

/// Trains from a fresh initialization seeded by config.seed.
TrainResult train_run(const World& world, const DatasetSplit& data, const PriorConfig& prior,
                      const TrainConfig& config, const RowSink& sink = {});

/// Continues a run until state.step reaches `until` (config.iterations
/// when 0).
TrainResult resume_run(const World& world, const DatasetSplit& data, PriorNetwork<float> net,
                       TrainState state, const TrainConfig& config, std::size_t until = 0,
                       const RowSink& sink = {});

}  // namespace eclab
