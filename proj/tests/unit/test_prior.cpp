#include <cmath>

#include "doctest.h"
#include "eclab/prior/prior_net.hpp"

using namespace eclab;

namespace {

std::size_t layout_total(const PriorConfig& c) {
  std::size_t n = 0;
  for (const auto& p : parameter_layout(c)) n += shape_numel(p.shape);
  return n;
}

Tensor<float> randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_SUITE("prior") {

TEST_CASE("desk parameter counts") {
  CHECK(parameter_count(PriorConfig::desk(false)) == 28800);
  CHECK(parameter_count(PriorConfig::desk(true)) == 29888);
  CHECK(PriorNetwork<float>::init(PriorConfig::desk(false), 1).allocated_parameters() == 28800);
  CHECK(PriorNetwork<float>::init(PriorConfig::desk(true), 1).allocated_parameters() == 29888);
}

TEST_CASE("paper-scale parameter counts match the layout") {
  const auto a = PriorConfig::paper_scale(false);
  const auto b = PriorConfig::paper_scale(true);
  CHECK(parameter_count(a) == 64783872);
  CHECK(parameter_count(b) == 65375232);
  CHECK(layout_total(a) == parameter_count(a));
  CHECK(layout_total(b) == parameter_count(b));
  CHECK(parameter_count(a) < parameter_count(b));
}

TEST_CASE("invalid configs are rejected") {
  auto c = PriorConfig::desk(false);
  c.num_heads = 0;
  CHECK_THROWS_AS(c.validate(), PriorError);
  c = PriorConfig::desk(false);
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), PriorError);
}

TEST_CASE("sinusoidal features at t = 1") {
  const auto f = sinusoidal_features(1.0, 4);
  REQUIRE(f.size() == 4);
  CHECK(f[0] == doctest::Approx(0.8414709848078965).epsilon(1e-15));
  CHECK(f[1] == doctest::Approx(0.009999833334166664).epsilon(1e-15));
  CHECK(f[2] == doctest::Approx(0.5403023058681398).epsilon(1e-15));
  CHECK(f[3] == doctest::Approx(0.9999500004166653).epsilon(1e-15));
}

TEST_CASE("init is seeded and the null embedding starts at zero") {
  const auto cfg = PriorConfig::desk(true);
  const auto a = PriorNetwork<float>::init(cfg, 3);
  CHECK(a.same_parameters(PriorNetwork<float>::init(cfg, 3)));
  CHECK_FALSE(a.same_parameters(PriorNetwork<float>::init(cfg, 4)));
  for (float v : a.null_embedding().data()) CHECK(v == 0.0f);
}

TEST_CASE("from_params rejects wrong shapes") {
  const auto cfg = PriorConfig::desk(false);
  auto params = PriorNetwork<float>::init(cfg, 1).params();
  params[0].value = Tensor<float>({3, 3});
  CHECK_THROWS_AS(PriorNetwork<float>::from_params(cfg, params), PriorError);
}

TEST_CASE("predictions have the embedding shape and rows are independent") {
  const auto net = PriorNetwork<float>::init(PriorConfig::desk(false), 2);
  const auto eps = randn({5, 32}, 1);
  auto zy = randn({5, 32}, 2);
  const auto out = predict_prior(net, eps, zy);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 32);
  for (std::size_t c = 0; c < 32; ++c) zy(4, c) += 1.0f;
  const auto out2 = predict_prior(net, eps, zy);
  for (std::size_t i = 0; i < 4 * 32; ++i) CHECK(out[i] == out2[i]);
}

TEST_CASE("tape forward matches the tape-free prediction") {
  const auto net = PriorNetwork<float>::init(PriorConfig::desk(true), 2);
  const auto zt = randn({3, 32}, 1);
  const auto zy = randn({3, 32}, 2);
  const std::vector<int> t{1, 500, 1000};
  Tape<float> tape;
  const auto b = bind(tape, net, false);
  const auto y = forward_diffusion(b, tape.constant(zt), std::span<const int>(t), tape.constant(zy)).value();
  const auto z = predict_diffusion(net, zt, std::span<const int>(t), zy);
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>(z.data().begin(), z.data().end()));
}

TEST_CASE("forward rejects mismatched embeddings and timesteps") {
  const auto net = PriorNetwork<float>::init(PriorConfig::desk(true), 2);
  const std::vector<int> t{1, 2};
  CHECK_THROWS(predict_diffusion(net, randn({3, 32}, 1), std::span<const int>(t), randn({3, 32}, 2)));
  const std::vector<int> bad{0, 1, 2};
  CHECK_THROWS(predict_diffusion(net, randn({3, 32}, 1), std::span<const int>(bad), randn({3, 32}, 2)));
  CHECK_THROWS(predict_prior(PriorNetwork<float>::init(PriorConfig::desk(false), 1), randn({3, 16}, 1),
                             randn({3, 16}, 2)));
}

TEST_CASE("permuting batch rows permutes the predictions") {
  const auto net = PriorNetwork<float>::init(PriorConfig::desk(false), 3);
  const auto eps = randn({4, 32}, 1), zy = randn({4, 32}, 2);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor<float> peps({4, 32}), pzy({4, 32});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      peps(r, c) = eps(perm[r], c);
      pzy(r, c) = zy(perm[r], c);
    }
  const auto out = predict_prior(net, eps, zy);
  const auto pout = predict_prior(net, peps, pzy);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 32; ++c) CHECK(pout(r, c) == doctest::Approx(out(perm[r], c)).epsilon(1e-5));
}

TEST_CASE("sinusoidal features at t = 0 and distinct timesteps") {
  const auto f0 = sinusoidal_features(0.0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(f0[i] == 0.0);
    CHECK(f0[i + 4] == 1.0);
  }
  CHECK(sinusoidal_features(10.0, 8) != sinusoidal_features(11.0, 8));
}

TEST_CASE("condition dropout swaps exactly the masked rows for the null embedding") {
  auto net = PriorNetwork<float>::init(PriorConfig::desk(true), 4);
  for (auto& v : net.params()[net.index().null_condition].value.data()) v = 0.25f;
  const auto zy = randn({3, 32}, 5);
  for (const std::vector<std::uint8_t>& mask :
       {std::vector<std::uint8_t>{0, 0, 0}, std::vector<std::uint8_t>{1, 1, 1}, std::vector<std::uint8_t>{0, 1, 0}}) {
    Tape<float> tape;
    const auto b = bind(tape, net, false);
    const auto out = apply_condition_dropout(b, tape.constant(zy), std::span<const std::uint8_t>(mask)).value();
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 32; ++c) CHECK(out(r, c) == (mask[r] ? 0.25f : zy(r, c)));
  }
}

TEST_CASE("diffusion predictions depend on the timestep") {
  auto net = PriorNetwork<float>::init(PriorConfig::desk(true), 5);
  const auto zt = randn({1, 32}, 1), zy = randn({1, 32}, 2);
  const std::vector<int> a{10}, b{900};
  const auto pa = predict_diffusion(net, zt, std::span<const int>(a), zy);
  const auto pb = predict_diffusion(net, zt, std::span<const int>(b), zy);
  CHECK(std::vector<float>(pa.data().begin(), pa.data().end()) != std::vector<float>(pb.data().begin(), pb.data().end()));
}

}  // TEST_SUITE
