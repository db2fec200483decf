#include "eclab/world/latent_world.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace eclab {

namespace {

constexpr std::uint64_t kBasisStream = 1;
constexpr std::uint64_t kTextMapStream = 2;
constexpr std::uint64_t kVisionMapStream = 3;
constexpr double kModalityMix = 1.0;
constexpr std::uint64_t kTextNoise = 11;
constexpr std::uint64_t kVisionNoise = 12;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Modified Gram-Schmidt in place; rows must be linearly independent.
void orthonormalize(std::vector<std::vector<double>>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double p = dot(rows[i], rows[j]);
      for (std::size_t c = 0; c < rows[i].size(); ++c) rows[i][c] -= p * rows[j][c];
    }
    const double n = std::sqrt(dot(rows[i], rows[i]));
    if (n < 1e-12) throw WorldError("orthonormalization hit a degenerate vector");
    for (auto& v : rows[i]) v /= n;
  }
}

std::vector<double> gaussian_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Orthogonal d x d map: Gram-Schmidt over the columns of a Gaussian matrix.
std::vector<double> random_orthogonal(Rng& rng, std::size_t d) {
  std::vector<std::vector<double>> cols(d);
  for (auto& c : cols) c = gaussian_vector(rng, d);
  orthonormalize(cols);
  std::vector<double> m(d * d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) m[r * d + c] = cols[c][r];
  return m;
}

// Orthonormalized (base + kModalityMix * G / sqrt(d)): a distinct rotation
// that stays correlated with `base`, so paired embeddings share direction.
std::vector<double> perturbed_orthogonal(const std::vector<double>& base, Rng& rng, std::size_t d) {
  const double scale = kModalityMix / std::sqrt(static_cast<double>(d));
  std::vector<std::vector<double>> cols(d, std::vector<double>(d));
  for (std::size_t c = 0; c < d; ++c) {
    const auto g = gaussian_vector(rng, d);
    for (std::size_t r = 0; r < d; ++r) cols[c][r] = base[r * d + c] + scale * g[r];
  }
  orthonormalize(cols);
  std::vector<double> m(d * d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) m[r * d + c] = cols[c][r];
  return m;
}

}  // namespace

std::size_t WorldSpec::total_attributes() const {
  std::size_t n = 0;
  for (const auto& g : attribute_vocab) n += g.size();
  return n;
}

std::size_t WorldSpec::concept_count() const {
  std::size_t n = attribute_vocab.empty() ? 0 : 1;
  for (const auto& g : attribute_vocab) n *= g.size();
  return n;
}

void WorldSpec::validate() const {
  if (attribute_vocab.empty()) throw WorldError("attribute_vocab must contain at least one group");
  for (std::size_t g = 0; g < attribute_vocab.size(); ++g) {
    const auto& group = attribute_vocab[g];
    if (group.empty()) throw WorldError("attribute group " + std::to_string(g) + " is empty");
    std::set<std::string> names(group.begin(), group.end());
    if (names.size() != group.size()) {
      throw WorldError("attribute group " + std::to_string(g) + " has duplicate names");
    }
  }
  if (embed_dim == 0) throw WorldError("embed_dim must be positive");
  if (embed_dim < total_attributes()) {
    throw WorldError("embed_dim " + std::to_string(embed_dim) + " is smaller than the " +
                     std::to_string(total_attributes()) + " attribute values");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw WorldError("noise_sigma must be a finite nonnegative number");
  }
  std::set<Concept> seen;
  for (const auto& c : holdout_concepts) {
    if (c.attrs.size() != attribute_vocab.size()) {
      throw WorldError("holdout concept has " + std::to_string(c.attrs.size()) +
                       " attributes, expected " + std::to_string(attribute_vocab.size()));
    }
    for (std::size_t g = 0; g < c.attrs.size(); ++g) {
      if (c.attrs[g] >= attribute_vocab[g].size()) {
        throw WorldError("holdout concept attribute index out of range in group " +
                         std::to_string(g));
      }
    }
    seen.insert(c);
  }
  if (seen.size() >= concept_count()) {
    throw WorldError("holdout_concepts must be a strict subset of all concepts");
  }
}

WorldSpec WorldSpec::desk_default() {
  WorldSpec spec;
  spec.seed = 7;
  spec.embed_dim = 32;
  spec.noise_sigma = 0.05;
  spec.attribute_vocab = {{"red", "green", "blue"},
                          {"cube", "sphere", "cylinder"},
                          {"metallic", "matte", "glossy"}};
  // texture = (color + shape) mod 3 with color != shape
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t s = 0; s < 3; ++s)
      if (c != s) spec.holdout_concepts.push_back(Concept{{c, s, (c + s) % 3}});
  return spec;
}

SplitPart parse_split_part(const std::string& name) {
  if (name == "train") return SplitPart::train;
  if (name == "seen" || name == "eval_seen") return SplitPart::eval_seen;
  if (name == "holdout" || name == "eval_holdout") return SplitPart::eval_holdout;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, seen or holdout)");
}

std::string to_string(SplitPart part) {
  switch (part) {
    case SplitPart::train: return "train";
    case SplitPart::eval_seen: return "seen";
    case SplitPart::eval_holdout: return "holdout";
  }
  return "?";
}

World World::build(const WorldSpec& spec) {
  spec.validate();
  World w;
  w.spec_ = spec;
  const std::size_t d = spec.embed_dim;
  Rng basis_rng(mix_seed(spec.seed, kBasisStream));
  // One Gram-Schmidt pass in group order: each group is orthonormal and
  // orthogonal to every earlier group (embed_dim >= total attributes).
  std::vector<std::vector<double>> rows;
  for (const auto& group : spec.attribute_vocab) {
    w.group_offset_.push_back(rows.size());
    for (std::size_t i = 0; i < group.size(); ++i) rows.push_back(gaussian_vector(basis_rng, d));
  }
  orthonormalize(rows);
  w.basis_ = std::move(rows);
  Rng text_rng(mix_seed(spec.seed, kTextMapStream));
  Rng vision_rng(mix_seed(spec.seed, kVisionMapStream));
  w.text_map_ = random_orthogonal(text_rng, d);
  w.vision_map_ = perturbed_orthogonal(w.text_map_, vision_rng, d);
  return w;
}

World World::from_parts(WorldSpec spec, std::vector<std::vector<double>> basis,
                        std::vector<double> text_map, std::vector<double> vision_map) {
  spec.validate();
  const std::size_t d = spec.embed_dim;
  if (basis.size() != spec.total_attributes()) throw WorldError("basis count mismatch");
  for (const auto& b : basis)
    if (b.size() != d) throw WorldError("basis vector length mismatch");
  if (text_map.size() != d * d || vision_map.size() != d * d) {
    throw WorldError("modality maps must be embed_dim x embed_dim");
  }
  World w;
  w.spec_ = std::move(spec);
  std::size_t offset = 0;
  for (const auto& group : w.spec_.attribute_vocab) {
    w.group_offset_.push_back(offset);
    offset += group.size();
  }
  w.basis_ = std::move(basis);
  w.text_map_ = std::move(text_map);
  w.vision_map_ = std::move(vision_map);
  return w;
}

const std::vector<double>& World::basis(std::size_t group, std::size_t value) const {
  if (group >= spec_.attribute_vocab.size() || value >= spec_.attribute_vocab[group].size()) {
    throw WorldError("basis index out of range");
  }
  return basis_[group_offset_[group] + value];
}

void World::validate_concept(const Concept& c) const {
  if (c.attrs.size() != spec_.attribute_vocab.size()) {
    throw WorldError("concept has " + std::to_string(c.attrs.size()) + " attributes, expected " +
                     std::to_string(spec_.attribute_vocab.size()));
  }
  for (std::size_t g = 0; g < c.attrs.size(); ++g) {
    if (c.attrs[g] >= spec_.attribute_vocab[g].size()) {
      throw WorldError("attribute index " + std::to_string(c.attrs[g]) + " out of range for group " +
                       std::to_string(g));
    }
  }
}

std::vector<double> World::semantic_vector(const Concept& c) const {
  validate_concept(c);
  std::vector<double> v(dim(), 0.0);
  for (std::size_t g = 0; g < c.attrs.size(); ++g) {
    const auto& b = basis_[group_offset_[g] + c.attrs[g]];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[i];
  }
  return v;
}

std::vector<float> World::encode(const std::vector<double>& map, const Concept& c,
                                 std::uint64_t seed, std::uint64_t tag) const {
  const auto s = semantic_vector(c);
  const std::size_t d = dim();
  std::vector<double> z(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += map[r * d + k] * s[k];
    z[r] = acc;
  }
  if (spec_.noise_sigma > 0.0) {
    Rng rng(mix_seed(seed, tag));
    for (auto& v : z) v += spec_.noise_sigma * rng.normal();
  }
  const double n = std::sqrt(dot(z, z));
  std::vector<float> out(d, 0.0f);
  if (n > 0.0) {
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(z[i] / n);
  }
  return out;
}

std::vector<float> World::encode_text(const Concept& c, std::uint64_t noise_seed) const {
  return encode(text_map_, c, noise_seed, kTextNoise);
}

std::vector<float> World::encode_vision(const Concept& c, std::uint64_t noise_seed) const {
  return encode(vision_map_, c, noise_seed, kVisionNoise);
}

std::vector<Concept> World::all_concepts() const {
  std::vector<Concept> out;
  Concept cur{std::vector<std::size_t>(spec_.attribute_vocab.size(), 0)};
  const std::size_t total = spec_.concept_count();
  for (std::size_t i = 0; i < total; ++i) {
    out.push_back(cur);
    for (std::size_t g = cur.attrs.size(); g-- > 0;) {
      if (++cur.attrs[g] < spec_.attribute_vocab[g].size()) break;
      cur.attrs[g] = 0;
    }
  }
  return out;
}

std::size_t World::concept_index(const Concept& c) const {
  validate_concept(c);
  std::size_t idx = 0;
  for (std::size_t g = 0; g < c.attrs.size(); ++g) idx = idx * spec_.attribute_vocab[g].size() + c.attrs[g];
  return idx;
}

bool World::is_holdout(const Concept& c) const {
  return std::find(spec_.holdout_concepts.begin(), spec_.holdout_concepts.end(), c) !=
         spec_.holdout_concepts.end();
}

Tensor<float> World::vision_prototypes() const {
  const auto concepts = all_concepts();
  Tensor<float> out(Shape{concepts.size(), dim()});
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const auto s = semantic_vector(concepts[i]);
    const std::size_t d = dim();
    std::vector<double> z(d, 0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t k = 0; k < d; ++k) z[r] += vision_map_[r * d + k] * s[k];
    const double n = std::sqrt(dot(z, z));
    for (std::size_t r = 0; r < d; ++r) out(i, r) = n > 0.0 ? static_cast<float>(z[r] / n) : 0.0f;
  }
  return out;
}

std::string World::describe(const Concept& c) const {
  validate_concept(c);
  std::string s;
  for (std::size_t g = 0; g < c.attrs.size(); ++g) {
    if (g) s += " ";
    s += spec_.attribute_vocab[g][c.attrs[g]];
  }
  return s;
}

DatasetSplit make_dataset(const World& world, std::size_t n_train, std::size_t n_eval_seen,
                          std::size_t n_eval_holdout, std::uint64_t seed) {
  if (n_train == 0) throw WorldError("make_dataset: the training split must not be empty");
  const auto& holdout = world.spec().holdout_concepts;
  if (n_eval_holdout > 0 && holdout.empty()) {
    throw WorldError("make_dataset: holdout samples requested but holdout_concepts is empty");
  }
  std::vector<Concept> seen;
  for (const auto& c : world.all_concepts())
    if (!world.is_holdout(c)) seen.push_back(c);

  Rng rng(seed);
  auto draw = [&](const std::vector<Concept>& pool, std::size_t n) {
    std::vector<PairSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = pool[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
      const auto noise_seed = rng.next_u64();
      out.push_back(PairSample{c, world.encode_text(c, noise_seed), world.encode_vision(c, noise_seed)});
    }
    return out;
  };
  DatasetSplit split;
  split.train = draw(seen, n_train);
  split.eval_seen = draw(seen, n_eval_seen);
  split.eval_holdout = draw(holdout, n_eval_holdout);
  return split;
}

const std::vector<PairSample>& split_part(const DatasetSplit& split, SplitPart part) {
  switch (part) {
    case SplitPart::train: return split.train;
    case SplitPart::eval_seen: return split.eval_seen;
    case SplitPart::eval_holdout: return split.eval_holdout;
  }
  throw std::invalid_argument("invalid split part");
}

std::vector<PairSample> sample_train_batch(const DatasetSplit& split, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw WorldError("batch_size must be at least 1");
  if (split.train.empty()) throw WorldError("training split is empty");
  std::vector<PairSample> out;
  out.reserve(batch_size);
  const auto hi = static_cast<std::int64_t>(split.train.size()) - 1;
  for (std::size_t i = 0; i < batch_size; ++i) {
    out.push_back(split.train[static_cast<std::size_t>(rng.uniform_int(0, hi))]);
  }
  return out;
}

std::vector<PairSample> sample_batch(const DatasetSplit& split, SplitPart part,
                                     std::size_t batch_size, std::uint64_t seed_or_cursor) {
  if (batch_size == 0) throw WorldError("batch_size must be at least 1");
  if (part == SplitPart::train) {
    Rng rng(seed_or_cursor);
    return sample_train_batch(split, batch_size, rng);
  }
  const auto& data = split_part(split, part);
  if (data.empty()) throw WorldError("split part '" + to_string(part) + "' is empty");
  if (batch_size > data.size()) {
    throw WorldError("batch_size " + std::to_string(batch_size) + " exceeds the " +
                     std::to_string(data.size()) + " samples of split '" + to_string(part) + "'");
  }
  const std::size_t start = static_cast<std::size_t>(seed_or_cursor % data.size());
  const std::size_t end = std::min(start + batch_size, data.size());
  return std::vector<PairSample>(data.begin() + static_cast<std::ptrdiff_t>(start),
                                 data.begin() + static_cast<std::ptrdiff_t>(end));
}

template <typename T>
Tensor<T> stack_text(const std::vector<PairSample>& batch) {
  if (batch.empty()) throw WorldError("cannot stack an empty batch");
  const std::size_t d = batch.front().z_y.size();
  Tensor<T> out(Shape{batch.size(), d});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = static_cast<T>(batch[i].z_y[j]);
  return out;
}

template <typename T>
Tensor<T> stack_vision(const std::vector<PairSample>& batch) {
  if (batch.empty()) throw WorldError("cannot stack an empty batch");
  const std::size_t d = batch.front().z_x.size();
  Tensor<T> out(Shape{batch.size(), d});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = static_cast<T>(batch[i].z_x[j]);
  return out;
}

template Tensor<float> stack_text<float>(const std::vector<PairSample>&);
template Tensor<double> stack_text<double>(const std::vector<PairSample>&);
template Tensor<float> stack_vision<float>(const std::vector<PairSample>&);
template Tensor<double> stack_vision<double>(const std::vector<PairSample>&);

}  // namespace eclab
