#include <cmath>
#include <set>

#include "doctest.h"
#include "eclab/world/latent_world.hpp"

using namespace eclab;

namespace {

double dotd(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dotf(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

std::vector<double> identity(std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return m;
}

}  // namespace

TEST_SUITE("world") {

TEST_CASE("desk world has 27 concepts and 6 holdouts covering every value") {
  const auto spec = WorldSpec::desk_default();
  CHECK(spec.concept_count() == 27);
  CHECK(spec.holdout_concepts.size() == 6);
  const auto w = World::build(spec);
  std::set<std::pair<std::size_t, std::size_t>> values, pairs;
  for (const auto& c : w.all_concepts()) {
    if (w.is_holdout(c)) continue;
    for (std::size_t g = 0; g < 3; ++g) {
      values.insert({g, c.attrs[g]});
      for (std::size_t h = g + 1; h < 3; ++h) pairs.insert({g * 3 + c.attrs[g], h * 3 + c.attrs[h]});
    }
  }
  CHECK(values.size() == 9);
  CHECK(pairs.size() == 27);
}

TEST_CASE("same seed gives the same world and different seeds differ") {
  auto spec = WorldSpec::desk_default();
  CHECK(World::build(spec) == World::build(spec));
  auto other = spec;
  other.seed = 8;
  CHECK_FALSE(World::build(spec) == World::build(other));
}

TEST_CASE("basis vectors are orthonormal within groups and nearly orthogonal across") {
  const auto w = World::build(WorldSpec::desk_default());
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(dotd(w.basis(g, i), w.basis(g, i)) == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t j = i + 1; j < 3; ++j) CHECK(std::abs(dotd(w.basis(g, i), w.basis(g, j))) < 1e-12);
      for (std::size_t h = g + 1; h < 3; ++h)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(dotd(w.basis(g, i), w.basis(h, j))) < 0.3);
    }
}

TEST_CASE("modality maps are orthogonal and distinct") {
  const auto w = World::build(WorldSpec::desk_default());
  const std::size_t d = w.dim();
  for (const auto* m : {&w.text_map(), &w.vision_map()})
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += (*m)[k * d + a] * (*m)[k * d + b];
        CHECK(s == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
      }
  CHECK(w.text_map() != w.vision_map());
}

TEST_CASE("embed_dim below the attribute total is rejected") {
  auto spec = WorldSpec::desk_default();
  spec.embed_dim = 4;
  CHECK_THROWS_AS(spec.validate(), WorldError);
  CHECK_THROWS_AS(World::build(spec), WorldError);
}

TEST_CASE("holdout covering every concept is rejected") {
  auto spec = WorldSpec::desk_default();
  const auto w = World::build(spec);
  spec.holdout_concepts = w.all_concepts();
  CHECK_THROWS_AS(spec.validate(), WorldError);
}

TEST_CASE("out of range concepts are rejected") {
  const auto w = World::build(WorldSpec::desk_default());
  CHECK_THROWS_AS(w.semantic_vector(Concept{{0, 3, 0}}), WorldError);
  CHECK_THROWS_AS(w.semantic_vector(Concept{{0, 1}}), WorldError);
}

TEST_CASE("semantic vectors are sums of basis vectors") {
  const auto w = World::build(WorldSpec::desk_default());
  const Concept c{{2, 0, 1}};
  const auto s = w.semantic_vector(c);
  for (std::size_t i = 0; i < w.dim(); ++i)
    CHECK(s[i] == doctest::Approx(w.basis(0, 2)[i] + w.basis(1, 0)[i] + w.basis(2, 1)[i]).epsilon(1e-14));
}

TEST_CASE("embeddings are unit norm and noise is seeded") {
  const auto w = World::build(WorldSpec::desk_default());
  for (const auto& c : w.all_concepts()) {
    CHECK(dotf(w.encode_text(c, 5), w.encode_text(c, 5)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(dotf(w.encode_vision(c, 5), w.encode_vision(c, 5)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(w.encode_text(c, 5) == w.encode_text(c, 5));
    CHECK(w.encode_text(c, 5) != w.encode_text(c, 6));
  }
}

TEST_CASE("identity maps without noise make both modalities equal") {
  auto spec = WorldSpec::desk_default();
  spec.noise_sigma = 0.0;
  const auto built = World::build(spec);
  std::vector<std::vector<double>> basis;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 3; ++i) basis.push_back(built.basis(g, i));
  const auto w = World::from_parts(spec, basis, identity(32), identity(32));
  for (const auto& c : w.all_concepts()) CHECK(w.encode_text(c, 1) == w.encode_vision(c, 2));
}

TEST_CASE("matched pairs align better than mismatched pairs") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto all = w.all_concepts();
  double matched = 0, mismatched = 0;
  std::size_t nm = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto t = w.encode_text(all[i], 1);
    matched += dotf(t, w.encode_vision(all[i], 1));
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (j == i) continue;
      mismatched += dotf(t, w.encode_vision(all[j], 1));
      ++nm;
    }
  }
  CHECK(matched / double(all.size()) > mismatched / double(nm));
}

TEST_CASE("holdout compositions never reach the training part") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto data = make_dataset(w, 2000, 200, 200, 3);
  CHECK(data.train.size() == 2000);
  CHECK(data.eval_seen.size() == 200);
  CHECK(data.eval_holdout.size() == 200);
  for (const auto& s : data.train) CHECK_FALSE(w.is_holdout(s.composition));
  for (const auto& s : data.eval_seen) CHECK_FALSE(w.is_holdout(s.composition));
  for (const auto& s : data.eval_holdout) CHECK(w.is_holdout(s.composition));
}

TEST_CASE("datasets are deterministic in their seed") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto a = make_dataset(w, 100, 10, 10, 3);
  const auto b = make_dataset(w, 100, 10, 10, 3);
  const auto c = make_dataset(w, 100, 10, 10, 4);
  CHECK(a.train.front().z_y == b.train.front().z_y);
  CHECK(a.train.back().z_x == b.train.back().z_x);
  CHECK(a.train.front().z_y != c.train.front().z_y);
}

TEST_CASE("batch sampling contracts") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto data = make_dataset(w, 100, 10, 10, 3);
  CHECK_THROWS_AS(sample_batch(data, SplitPart::train, 0, 1), WorldError);
  CHECK_THROWS_AS(sample_batch(data, SplitPart::eval_seen, 11, 0), WorldError);
  CHECK(sample_batch(data, SplitPart::train, 16, 9).size() == 16);
  CHECK(sample_batch(data, SplitPart::train, 16, 9)[3].z_y == sample_batch(data, SplitPart::train, 16, 9)[3].z_y);
  const auto tail = sample_batch(data, SplitPart::eval_seen, 4, 8);
  CHECK(tail.size() == 2);
  CHECK(tail[0].z_y == data.eval_seen[8].z_y);
  const auto stacked = stack_text<float>(tail);
  CHECK(stacked.rows() == 2);
  CHECK(stacked.cols() == 32);
  const auto empty = make_dataset(World::build([] {
                                    auto s = WorldSpec::desk_default();
                                    s.holdout_concepts.clear();
                                    return s;
                                  }()),
                                  10, 2, 0, 1);
  CHECK_THROWS_AS(sample_batch(empty, SplitPart::eval_holdout, 1, 0), WorldError);
}

TEST_CASE("changing one attribute moves the semantic vector by a basis difference") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto a = w.semantic_vector(Concept{{0, 1, 2}});
  const auto b = w.semantic_vector(Concept{{2, 1, 2}});
  for (std::size_t i = 0; i < w.dim(); ++i)
    CHECK(a[i] - b[i] == doctest::Approx(w.basis(0, 0)[i] - w.basis(0, 2)[i]).epsilon(1e-14));
  CHECK(w.semantic_vector(Concept{{0, 1, 2}}) == a);
}

TEST_CASE("an all-zero basis gives zero semantic vectors") {
  const auto spec = WorldSpec::desk_default();
  const auto w = World::from_parts(spec, std::vector<std::vector<double>>(9, std::vector<double>(32, 0.0)),
                                   identity(32), identity(32));
  for (double v : w.semantic_vector(Concept{{1, 1, 1}})) CHECK(v == 0.0);
}

TEST_CASE("without noise the matched cosine does not depend on the seed") {
  auto spec = WorldSpec::desk_default();
  spec.noise_sigma = 0.0;
  const auto w = World::build(spec);
  const Concept c{{1, 2, 0}};
  const double ref = dotf(w.encode_text(c, 1), w.encode_vision(c, 1));
  for (std::uint64_t s = 2; s < 10; ++s) CHECK(dotf(w.encode_text(c, s), w.encode_vision(c, s + 50)) == ref);
}

TEST_CASE("Monte-Carlo alignment margin over 10k pairs") {
  // Frozen from a single measurement of the desk world.
  const auto w = World::build(WorldSpec::desk_default());
  const auto all = w.all_concepts();
  Rng rng(77);
  double matched = 0, mismatched = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto a = all[rng.uniform_int(0, 26)];
    auto b = all[rng.uniform_int(0, 26)];
    while (b == a) b = all[rng.uniform_int(0, 26)];
    const auto s1 = rng.next_u64(), s2 = rng.next_u64();
    const auto zy = w.encode_text(a, s1);
    matched += dotf(zy, w.encode_vision(a, s2));
    mismatched += dotf(zy, w.encode_vision(b, s2));
  }
  CHECK((matched - mismatched) / n == doctest::Approx(0.3968538356145509).epsilon(1e-9));
  CHECK(matched / n == doctest::Approx(0.61443957925729364).epsilon(1e-9));
}

TEST_CASE("every emitted embedding has unit norm") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto data = make_dataset(w, 500, 100, 100, 8);
  for (const auto* part : {&data.train, &data.eval_seen, &data.eval_holdout})
    for (const auto& s : *part) {
      CHECK(std::abs(dotf(s.z_y, s.z_y) - 1.0) < 2e-6);
      CHECK(std::abs(dotf(s.z_x, s.z_x) - 1.0) < 2e-6);
    }
}

TEST_CASE("an empty training split is rejected") {
  const auto w = World::build(WorldSpec::desk_default());
  CHECK_THROWS_AS(make_dataset(w, 0, 10, 10, 1), WorldError);
}

TEST_CASE("sequential eval batches visit every sample once per pass") {
  const auto w = World::build(WorldSpec::desk_default());
  const auto data = make_dataset(w, 100, 10, 10, 3);
  CHECK(sample_batch(data, SplitPart::eval_holdout, 1, 4).size() == 1);
  std::size_t visited = 0;
  for (std::size_t cursor = 0; cursor < data.eval_holdout.size();) {
    const auto batch = sample_batch(data, SplitPart::eval_holdout, 3, cursor);
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(batch[i].z_x == data.eval_holdout[cursor + i].z_x);
    cursor += batch.size();
    visited += batch.size();
  }
  CHECK(visited == data.eval_holdout.size());
}

}  // TEST_SUITE
