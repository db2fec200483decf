#pragma once

// Procedural stand-in for a pair of aligned text/vision embedding spaces.
//
// A concept picks one value from each attribute group; its semantic vector
// is the sum of the per-value basis vectors. Text and vision encoders apply
// two different fixed orthogonal maps (the vision map is an orthonormalized
// perturbation of the text map), add Gaussian noise and project to
// the unit sphere. Concepts listed in `holdout_concepts` never appear in
// training data and serve as unseen compositions at evaluation time.

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclab/gradcore/tensor.hpp"
#include "eclab/rng.hpp"

namespace eclab {

class WorldError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One attribute index per attribute group.
struct Concept {
  std::vector<std::size_t> attrs;
  auto operator<=>(const Concept&) const = default;
};

struct WorldSpec {
  std::uint64_t seed = 7;
  std::size_t embed_dim = 32;
  std::vector<std::vector<std::string>> attribute_vocab;
  double noise_sigma = 0.05;
  std::vector<Concept> holdout_concepts;

  std::size_t total_attributes() const;
  std::size_t concept_count() const;
  /// Throws WorldError describing the first violated invariant.
  void validate() const;

  /// 3 colors x 3 shapes x 3 textures, 32 dims, sigma 0.05, 6 held-out
  /// compositions chosen so every attribute value and every pair of values
  /// from two groups still occurs in training.
  static WorldSpec desk_default();

  bool operator==(const WorldSpec&) const = default;
};

struct PairSample {
  Concept composition;
  std::vector<float> z_y;
  std::vector<float> z_x;
};

struct DatasetSplit {
  std::vector<PairSample> train;
  std::vector<PairSample> eval_seen;
  std::vector<PairSample> eval_holdout;
};

enum class SplitPart { train, eval_seen, eval_holdout };

SplitPart parse_split_part(const std::string& name);
std::string to_string(SplitPart part);

class World {
 public:
  /// Builds bases and modality maps from WorldSpec::seed.
  static World build(const WorldSpec& spec);

  /// Assembles a world from explicit tables (test fixtures). `basis` holds
  /// one row per attribute value in group order; maps are row-major d x d.
  static World from_parts(WorldSpec spec, std::vector<std::vector<double>> basis,
                          std::vector<double> text_map, std::vector<double> vision_map);

  const WorldSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.embed_dim; }

  const std::vector<double>& basis(std::size_t group, std::size_t value) const;
  const std::vector<double>& text_map() const { return text_map_; }
  const std::vector<double>& vision_map() const { return vision_map_; }

  void validate_concept(const Concept& c) const;
  std::vector<double> semantic_vector(const Concept& c) const;

  std::vector<float> encode_text(const Concept& c, std::uint64_t noise_seed) const;
  std::vector<float> encode_vision(const Concept& c, std::uint64_t noise_seed) const;

  /// Every concept of the Cartesian product, first group varying slowest.
  std::vector<Concept> all_concepts() const;
  std::size_t concept_index(const Concept& c) const;
  bool is_holdout(const Concept& c) const;

  /// Noise-free unit vision embedding of every concept, in all_concepts()
  /// order. Used as retrieval candidates.
  Tensor<float> vision_prototypes() const;

  std::string describe(const Concept& c) const;

  bool operator==(const World&) const = default;

 private:
  World() = default;
  std::vector<float> encode(const std::vector<double>& map, const Concept& c, std::uint64_t seed,
                            std::uint64_t tag) const;

  WorldSpec spec_;
  std::vector<std::size_t> group_offset_;
  std::vector<std::vector<double>> basis_;
  std::vector<double> text_map_;
  std::vector<double> vision_map_;
};

DatasetSplit make_dataset(const World& world, std::size_t n_train, std::size_t n_eval_seen,
                          std::size_t n_eval_holdout, std::uint64_t seed);

/// Uniform with-replacement draw from the training part.
std::vector<PairSample> sample_train_batch(const DatasetSplit& split, std::size_t batch_size, Rng& rng);

/// Train: with-replacement draw seeded by `seed_or_cursor`. Eval parts:
/// the sequential window starting at `seed_or_cursor` modulo the part
/// length, truncated at the end so one pass visits every sample once.
std::vector<PairSample> sample_batch(const DatasetSplit& split, SplitPart part,
                                     std::size_t batch_size, std::uint64_t seed_or_cursor);

const std::vector<PairSample>& split_part(const DatasetSplit& split, SplitPart part);

/// Stacks z_y (or z_x) of a batch into an [N x d] tensor.
template <typename T>
Tensor<T> stack_text(const std::vector<PairSample>& batch);
template <typename T>
Tensor<T> stack_vision(const std::vector<PairSample>& batch);

}  // namespace eclab
