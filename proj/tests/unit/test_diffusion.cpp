#include <cmath>

#include "doctest.h"
#include "eclab/diffusion/diffusion.hpp"

using namespace eclab;

namespace {

template <typename T>
Tensor<T> randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

template <typename T>
std::vector<T> flat(const Tensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

// A trained-looking network: the default init leaves the null embedding at
// zero, so perturb every parameter to make both guidance branches distinct.
PriorNetwork<float> perturbed_net(std::uint64_t seed) {
  auto net = PriorNetwork<float>::init(PriorConfig::desk(true), seed);
  Rng rng(seed + 100);
  for (auto& p : net.params())
    for (auto& v : p.value.data()) v += static_cast<float>(0.05 * rng.normal());
  return net;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("linear schedule cumulative products") {
  const auto s = make_linear_schedule();
  CHECK(s.steps == 1000);
  CHECK(s.beta_at(1) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(s.beta_at(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.alpha_bar_at(500) == doctest::Approx(0.07858724288177824).epsilon(1e-12));
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-10));
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
}

TEST_CASE("schedule rejects bad parameters and timesteps") {
  CHECK_THROWS_AS(make_linear_schedule(0), DiffusionError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.5, 0.1), DiffusionError);
  CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), DiffusionError);
  const auto s = make_linear_schedule();
  CHECK_THROWS_AS(s.check_timestep(0), DiffusionError);
  CHECK_THROWS_AS(s.check_timestep(1001), DiffusionError);
}

TEST_CASE("q_sample interpolates signal and noise") {
  const auto s = make_linear_schedule();
  const auto zx = randn<double>({2, 4}, 1), eps = randn<double>({2, 4}, 2);
  const auto zt = q_sample(s, zx, 500, eps);
  const double a = std::sqrt(s.alpha_bar_at(500)), b = std::sqrt(1 - s.alpha_bar_at(500));
  for (std::size_t i = 0; i < 8; ++i) CHECK(zt[i] == doctest::Approx(a * zx[i] + b * eps[i]).epsilon(1e-14));
}

TEST_CASE("guidance of one returns the conditional prediction bitwise") {
  const auto net = perturbed_net(1);
  const auto zt = randn<float>({4, 32}, 1), zy = randn<float>({4, 32}, 2);
  const std::vector<int> t(4, 300);
  CHECK(flat(cfg_predict(net, zt, 300, zy, 1.0)) == flat(predict_diffusion(net, zt, std::span<const int>(t), zy)));
  CHECK(flat(cfg_predict(net, zt, 300, zy, 0.0)) ==
        flat(predict_diffusion(net, zt, std::span<const int>(t), zy, true)));
  CHECK(flat(cfg_predict(net, zt, 300, zy, 4.0)) != flat(cfg_predict(net, zt, 300, zy, 1.0)));
}

TEST_CASE("deterministic sampling ignores the noise stream after initialization") {
  const auto net = perturbed_net(2);
  const auto s = make_linear_schedule();
  const auto zy = randn<float>({3, 32}, 3);
  const auto zT = randn<float>({3, 32}, 4);
  const Denoiser<float> d = [&](const Tensor<float>& z, int t) { return cfg_predict(net, z, t, zy, 4.0); };
  Rng r1(10), r2(20);
  const auto a = sample_from(d, s, zT, 25, 0.0, r1);
  const auto b = sample_from(d, s, zT, 25, 0.0, r2);
  CHECK(flat(a) == flat(b));
  CHECK(r1 == Rng(10));
  Rng r3(10), r4(20);
  CHECK(flat(sample_from(d, s, zT, 25, 1.0, r3)) != flat(sample_from(d, s, zT, 25, 1.0, r4)));
}

TEST_CASE("single-step sampling equals one guided prediction at t = T") {
  const auto net = perturbed_net(3);
  const auto s = make_linear_schedule();
  const auto zy = randn<float>({3, 32}, 5);
  const auto out = sample_loop(net, s, zy, SamplerOptions{1, 4.0, 1.0}, 77);
  Rng rng(77);
  const auto zT = gaussian_tensor<float>(zy.shape(), rng);
  CHECK(flat(out) == flat(cfg_predict(net, zT, 1000, zy, 4.0)));
}

TEST_CASE("the step from t = 1 ignores the noise sample") {
  const auto s = make_linear_schedule();
  const auto zt = randn<double>({2, 4}, 1), z0 = randn<double>({2, 4}, 2);
  const auto e1 = randn<double>({2, 4}, 3), e2 = randn<double>({2, 4}, 4);
  const auto a = posterior_step(s, zt, z0, 1, 1.0, &e1);
  CHECK(flat(a) == flat(posterior_step(s, zt, z0, 1, 1.0, &e2)));
  CHECK(flat(a) == flat(posterior_step<double>(s, zt, z0, 1, 1.0, nullptr)));
}

TEST_CASE("posterior step matches its closed form") {
  const auto s = make_linear_schedule();
  const auto zt = randn<double>({1, 3}, 1), z0 = randn<double>({1, 3}, 2), e = randn<double>({1, 3}, 3);
  const int t = 400;
  const double ab = s.alpha_bar_at(t), abp = s.alpha_bar_at(t - 1), beta = s.beta_at(t);
  const double c0 = std::sqrt(abp) * beta / (1 - ab);
  const double c1 = std::sqrt(1 - beta) * (1 - abp) / (1 - ab);
  const double sigma = std::sqrt(beta * (1 - abp) / (1 - ab));
  const auto out = posterior_step(s, zt, z0, t, 0.5, &e);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(out[i] == doctest::Approx(c0 * z0[i] + c1 * zt[i] + 0.5 * sigma * e[i]).epsilon(1e-12));
  CHECK_THROWS_AS(posterior_step<double>(s, zt, z0, t, 0.5, nullptr), DiffusionError);
}

TEST_CASE("inference timesteps start at T and strictly decrease") {
  CHECK(inference_timesteps(1000, 1) == std::vector<int>{1000});
  CHECK(inference_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250});
  const auto all = inference_timesteps(1000, 1000);
  CHECK(all.front() == 1000);
  CHECK(all.back() == 1);
  CHECK_THROWS_AS(inference_timesteps(1000, 0), DiffusionError);
  CHECK_THROWS_AS(inference_timesteps(1000, 1001), DiffusionError);
}

TEST_CASE("sampling traces one prediction per step") {
  const auto net = perturbed_net(4);
  const auto s = make_linear_schedule();
  const auto zy = randn<float>({2, 32}, 5);
  SampleTrace<float> trace;
  const auto out = sample_loop(net, s, zy, SamplerOptions{5, 2.0, 0.0}, 1, &trace);
  CHECK(trace.timesteps == inference_timesteps(1000, 5));
  CHECK(flat(trace.z0_hat.back()) == flat(out));
  const auto dev = trajectory_deviation(trace, out);
  CHECK(dev.size() == 5);
  CHECK(dev.back() == 0.0);
}

TEST_CASE("sample_loop needs a time-conditioned network") {
  const auto net = PriorNetwork<float>::init(PriorConfig::desk(false), 1);
  CHECK_THROWS_AS(sample_loop(net, make_linear_schedule(), randn<float>({2, 32}, 1), SamplerOptions{}, 1),
                  DiffusionError);
}

TEST_CASE("an exact denoiser without step noise lands on its target") {
  const auto s = make_linear_schedule();
  const auto target = randn<double>({3, 4}, 9);
  const Denoiser<double> oracle = [&](const Tensor<double>&, int) { return target; };
  for (std::size_t steps : {1u, 5u, 25u}) {
    Rng rng(1);
    const auto out = sample_from(oracle, s, randn<double>({3, 4}, 10), steps, 0.0, rng);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i] - target[i]) < 1e-10);
  }
}

TEST_CASE("guided prediction is the affine combination of both branches") {
  const auto net = perturbed_net(6);
  const auto zt = randn<float>({2, 32}, 1), zy = randn<float>({2, 32}, 2);
  const auto cond = cfg_predict(net, zt, 300, zy, 1.0);
  const auto uncond = cfg_predict(net, zt, 300, zy, 0.0);
  const auto g = cfg_predict(net, zt, 300, zy, 4.0);
  for (std::size_t i = 0; i < g.numel(); ++i)
    CHECK(g[i] == doctest::Approx(uncond[i] + 4.0 * (cond[i] - uncond[i])).epsilon(1e-5));
}

TEST_CASE("scalar posterior step at t = 2") {
  const auto s = make_linear_schedule();
  const Tensor<double> zt({1, 1}, 1.0), z0({1, 1}, 0.0);
  const double ab = s.alpha_bar_at(2), abp = s.alpha_bar_at(1), alpha = ab / abp;
  const double expected = std::sqrt(alpha) * (1 - abp) / (1 - ab);
  CHECK(posterior_step<double>(s, zt, z0, 2, 0.0, nullptr)[0] == doctest::Approx(expected).epsilon(1e-12));
}

}  // TEST_SUITE
