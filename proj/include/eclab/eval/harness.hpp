#pragma once

// Strategy comparison and ablation sweeps. Cells are independent jobs and
// run on OpenMP threads (ECLAB_JOBS overrides the count); rows come back in
// cell order regardless of scheduling.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eclab/io/config.hpp"
#include "eclab/eval/metrics.hpp"
#include "eclab/trainer/trainer.hpp"

namespace eclab {

struct MetricsRecord {
  std::string strategy;
  std::string cell;
  std::uint64_t seed = 0;
  double top1_seen = 0.0;
  double top1_holdout = 0.0;
  double mean_cosine = 0.0;
  double latent_mse = 0.0;
  double diversity_spread = 0.0;
  double seconds = 0.0;
  std::string config_hash;

  bool operator==(const MetricsRecord&) const = default;
};

/// Throws std::domain_error when a metric leaves its valid range.
void check_ranges(const MetricsRecord& r);

struct MetricsReport {
  std::vector<MetricsRecord> records;
  std::map<std::string, Json> configs;  // config_hash -> resolved config

  bool operator==(const MetricsReport&) const = default;
  /// Records whose cell label matches, in order.
  std::vector<MetricsRecord> cell(const std::string& label) const;
};

inline constexpr const char* kReportHeader =
    "strategy,cell,seed,top1_seen,top1_holdout,mean_cosine,latent_mse,diversity_spread,seconds";

/// Writes `path` (CSV) and `path` + ".json" (configs, per-row hashes and
/// the note that the metrics are latent-space proxies).
void write_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

/// Thread count for independent cells: ECLAB_JOBS if set, else OpenMP's max.
int cell_jobs();

MetricsRecord make_record(const std::string& strategy, const std::string& cell, std::uint64_t seed,
                          const EvalMetrics& m, double seconds, const std::string& hash);

/// Shared inputs of every experiment built from one config.
struct Experiment {
  ExperimentConfig config;
  World world;
  DatasetSplit data;

  static Experiment from_config(const ExperimentConfig& config);
};

struct TrainedCell {
  ExperimentConfig config;  // with the strategy, seed and lambda of this cell
  TrainResult result;
  MetricsRecord record;
};

/// Sampler settings per row come from `base` with steps replaced; eval
/// seeds are the cell seeds, so every cell starts from the same z_T.
MetricsReport ablate_prior_steps(const Experiment& exp, const PriorNetwork<float>& net,
                                 const std::vector<std::size_t>& steps_list, const EvalOptions& base,
                                 const std::vector<std::uint64_t>& seeds);

MetricsReport ablate_eta(const Experiment& exp, const PriorNetwork<float>& net,
                         const std::vector<double>& eta_list, const EvalOptions& base,
                         const std::vector<std::uint64_t>& seeds);

/// Trains one ECLIPSE prior per (lambda, seed).
MetricsReport ablate_lambda(const Experiment& exp, const std::vector<double>& lambda_list,
                            const std::vector<std::uint64_t>& seeds, std::vector<TrainedCell>* models = nullptr);

/// Trains projection, diffusion and ECLIPSE priors per seed with the same
/// split and budget, then appends one "mean" row per strategy.
MetricsReport compare_strategies(const Experiment& exp, const std::vector<std::uint64_t>& seeds,
                                 std::vector<TrainedCell>* models = nullptr);

inline const std::vector<std::size_t> kDefaultStepsList{1, 2, 5, 10, 25};
inline const std::vector<double> kDefaultEtaList{0.0, 0.3, 0.7, 1.0};
inline const std::vector<double> kDefaultLambdaList{0.0, 0.1, 0.2, 0.4, 1.0, 5.0};

std::string format_number(double v);

}  // namespace eclab
