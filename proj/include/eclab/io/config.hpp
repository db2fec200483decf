#pragma once

// Experiment configuration files. Every field is optional on input; the
// saved copy always carries every resolved value so a run can be repeated
// from its output directory alone.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "eclab/prior/prior_net.hpp"
#include "eclab/trainer/trainer.hpp"
#include "eclab/world/latent_world.hpp"

namespace eclab {

using Json = nlohmann::ordered_json;

/// File-system or format problems that are not numerical.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetParams {
  std::size_t n_train = 5000;
  std::size_t n_eval_seen = 512;
  std::size_t n_eval_holdout = 512;
  std::uint64_t seed = 99;
  bool operator==(const DatasetParams&) const = default;
};

struct ExperimentConfig {
  std::string preset = "desk";
  WorldSpec world = WorldSpec::desk_default();
  DatasetParams dataset;
  PriorConfig prior = PriorConfig::desk(false);
  TrainConfig train = TrainConfig::desk();
  std::string output_dir = "runs/default";

  /// Field-level checks plus strategy/time-conditioning and embed_dim
  /// agreement. Throws ConfigError.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;

  /// "desk" (minute-scale defaults) or "paper" (published recipe).
  static ExperimentConfig preset_named(const std::string& name);
};

Json to_json(const WorldSpec& spec);
Json to_json(const DatasetParams& params);
Json to_json(const PriorConfig& prior);
Json to_json(const TrainConfig& train);
Json to_json(const EvalOptions& eval);
Json to_json(const ExperimentConfig& config);

/// Parses a (possibly partial) experiment document. Unknown keys and type
/// mismatches raise ConfigError naming the dotted field path.
ExperimentConfig experiment_from_json(const Json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Pretty-printed, newline-terminated; identical configs give identical bytes.
std::string dump_json(const Json& doc);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// World spec plus dataset sizes and seeds; embeddings are regenerated.
Json dataset_document(const ExperimentConfig& config);
void write_dataset_file(const std::filesystem::path& path, const ExperimentConfig& config);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Hash of the canonical JSON of a config.
std::string config_hash(const ExperimentConfig& config);

}  // namespace eclab
