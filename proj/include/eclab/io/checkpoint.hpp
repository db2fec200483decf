#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "ECLP"  u32 version  u64 json_length  json bytes
//   per tensor: u32 name_length  name  u32 rank  u64 dims[rank]  f32 values
//   u64 FNV-1a of every preceding byte
//
// Parameters come first in declaration order, then the Adam moments as
// "adam.m.<name>" and "adam.v.<name>". The JSON blob holds the resolved
// experiment config, step counters, generator state and metric snapshots.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclab/io/config.hpp"
#include "eclab/trainer/trainer.hpp"

namespace eclab {

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  PriorNetwork<float> net;
  TrainState state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws ChecksumError on a corrupted payload, IoError on format errors.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Json metrics_to_json(const MetricsRow& row);
MetricsRow metrics_from_json(const Json& j);

}  // namespace eclab
