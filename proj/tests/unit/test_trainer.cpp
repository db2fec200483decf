#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "eclab/trainer/trainer.hpp"

using namespace eclab;

namespace {

struct Fixture {
  World world = World::build(WorldSpec::desk_default());
  DatasetSplit data = make_dataset(world, 400, 32, 32, 5);
};

TrainConfig small_config(Strategy s, std::size_t iterations) {
  TrainConfig c;
  c.strategy = s;
  c.iterations = iterations;
  c.batch_size = 16;
  c.base_lr = 1e-3;
  c.eval_every = 10;
  c.eval.max_samples = 16;
  c.eval.inference_steps = 2;
  c.seed = 3;
  return c;
}

PriorConfig prior_for(Strategy s) { return PriorConfig::desk(s == Strategy::diffusion); }

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("one Adam step from w = 1 with gradient 0.5") {
  std::vector<NamedTensor<float>> params{{"w", Tensor<float>({1}, {1.0f})}};
  AdamState state{0, {{0.0f}}, {{0.0f}}};
  adam_step(params, {{0.5f}}, state, 0.1);
  CHECK(state.step == 1);
  CHECK(params[0].value[0] == static_cast<float>(0.9000000019999999));
  CHECK(state.m[0][0] == static_cast<float>(0.05));
  CHECK(state.v[0][0] == static_cast<float>(0.00025));
}

TEST_CASE("a zero gradient leaves parameters fixed and decays the moments") {
  std::vector<NamedTensor<float>> params{{"w", Tensor<float>({1}, {1.0f})}};
  AdamState fresh{0, {{0.0f}}, {{0.0f}}};
  adam_step(params, {{0.0f}}, fresh, 0.1);
  CHECK(params[0].value[0] == 1.0f);
  CHECK(fresh.m[0][0] == 0.0f);
  AdamState warm{1, {{0.05f}}, {{0.00025f}}};
  adam_step(params, {{0.0f}}, warm, 0.1);
  CHECK(warm.m[0][0] == static_cast<float>(0.9 * double(0.05f)));
  CHECK(warm.v[0][0] == static_cast<float>(0.999 * double(0.00025f)));
}

TEST_CASE("Adam rejects mismatched gradients") {
  std::vector<NamedTensor<float>> params{{"w", Tensor<float>({2}, 1.0f)}};
  AdamState state{0, {{0.0f, 0.0f}}, {{0.0f, 0.0f}}};
  CHECK_THROWS_AS(adam_step(params, {{0.5f}}, state, 0.1), ShapeError);
}

TEST_CASE("warm restart schedule") {
  CHECK(warm_restart_lr(0, 1e-3, 1000, 1, 1e-6) == 1e-3);
  CHECK(warm_restart_lr(500, 1e-3, 1000, 1, 0.0) == doctest::Approx(5e-4).epsilon(1e-14));
  CHECK(warm_restart_lr(1000, 1e-3, 1000, 1, 1e-6) == 1e-3);
  CHECK(warm_restart_lr(999, 1e-3, 1000, 1, 1e-6) < 1e-5);
  // T_mult 2: cycles of 10, 20, 40
  CHECK(warm_restart_lr(10, 1.0, 10, 2, 0.0) == 1.0);
  CHECK(warm_restart_lr(20, 1.0, 10, 2, 0.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(warm_restart_lr(30, 1.0, 10, 2, 0.0) == 1.0);
  for (std::size_t s = 0; s < 3000; ++s) {
    const double lr = warm_restart_lr(s, 5e-5, 1000, 1, 1e-6);
    CHECK(lr >= 1e-6);
    CHECK(lr <= 5e-5);
  }
}

TEST_CASE("condition dropout mask frequency") {
  Rng rng(11);
  const auto mask = condition_dropout_mask(200000, 0.1, rng);
  const double frac = std::accumulate(mask.begin(), mask.end(), 0.0) / double(mask.size());
  CHECK(std::abs(frac - 0.1) < 0.003);
  Rng r0(1);
  for (auto m : condition_dropout_mask(100, 0.0, r0)) CHECK(m == 0);
  for (auto m : condition_dropout_mask(100, 1.0, r0)) CHECK(m == 1);
}

TEST_CASE("invalid training configs are rejected") {
  auto c = TrainConfig::desk();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig::desk();
  c.base_lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig::desk();
  c.cond_dropout_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig::desk();
  c.strategy = Strategy::diffusion;
  CHECK_THROWS_AS(check_compatible(PriorConfig::desk(false), c), ConfigError);
  CHECK_NOTHROW(check_compatible(PriorConfig::desk(true), c));
}

TEST_CASE("zero iterations return the initial network") {
  Fixture f;
  auto c = small_config(Strategy::eclipse, 0);
  const auto r = train_run(f.world, f.data, prior_for(c.strategy), c);
  CHECK(r.state.step == 0);
  CHECK(r.log.empty());
  CHECK(r.net.same_parameters(PriorNetwork<float>::init(prior_for(c.strategy), mix_seed(c.seed, 0x1417))));
}

TEST_CASE("lambda zero trains exactly like the projection strategy") {
  Fixture f;
  auto e = small_config(Strategy::eclipse, 100);
  e.loss.lambda = 0.0;
  const auto p = small_config(Strategy::projection, 100);
  const auto a = train_run(f.world, f.data, prior_for(e.strategy), e);
  const auto b = train_run(f.world, f.data, prior_for(p.strategy), p);
  CHECK(a.net.same_parameters(b.net));
  CHECK(a.loss_history == b.loss_history);
}

TEST_CASE("identical configs give identical runs") {
  Fixture f;
  for (auto s : {Strategy::projection, Strategy::eclipse, Strategy::diffusion}) {
    const auto c = small_config(s, 15);
    const auto a = train_run(f.world, f.data, prior_for(s), c);
    const auto b = train_run(f.world, f.data, prior_for(s), c);
    CHECK(a.net.same_parameters(b.net));
    CHECK(a.state == b.state);
    CHECK(a.log == b.log);
  }
}

TEST_CASE("resumed training matches an uninterrupted run") {
  Fixture f;
  for (auto s : {Strategy::eclipse, Strategy::diffusion}) {
    const auto c = small_config(s, 30);
    const auto full = train_run(f.world, f.data, prior_for(s), c);
    auto head_cfg = c;
    const auto head = resume_run(f.world, f.data, PriorNetwork<float>::init(prior_for(s), mix_seed(c.seed, 0x1417)),
                                 initial_state(PriorNetwork<float>::init(prior_for(s), mix_seed(c.seed, 0x1417)), c),
                                 head_cfg, 12);
    CHECK(head.state.step == 12);
    const auto tail = resume_run(f.world, f.data, head.net, head.state, c);
    CHECK(tail.net.same_parameters(full.net));
    CHECK(tail.state == full.state);
    std::vector<double> joined = head.loss_history;
    joined.insert(joined.end(), tail.loss_history.begin(), tail.loss_history.end());
    CHECK(joined == full.loss_history);
  }
}

TEST_CASE("evaluation frequency does not change the trajectory") {
  Fixture f;
  auto a = small_config(Strategy::eclipse, 20);
  auto b = a;
  b.eval_every = 7;
  CHECK(train_run(f.world, f.data, prior_for(a.strategy), a)
            .net.same_parameters(train_run(f.world, f.data, prior_for(b.strategy), b).net));
}

TEST_CASE("logged rows follow eval_every and the final step") {
  Fixture f;
  auto c = small_config(Strategy::projection, 25);
  std::vector<std::size_t> steps;
  const auto r = train_run(f.world, f.data, prior_for(c.strategy), c,
                           [&](const MetricsRow& row) { steps.push_back(row.step); });
  CHECK(steps == std::vector<std::size_t>{10, 20, 25});
  CHECK(r.log.size() == 3);
  CHECK(r.state.last->step == 25);
  CHECK(r.log.front().loss_cls > 0.0);
}

TEST_CASE("training reduces the loss") {
  Fixture f;
  for (auto s : {Strategy::projection, Strategy::eclipse, Strategy::diffusion}) {
    auto c = small_config(s, 200);
    c.eval_every = 1000;
    const auto r = train_run(f.world, f.data, prior_for(s), c);
    const auto& h = r.loss_history;
    const double first = std::accumulate(h.begin(), h.begin() + 20, 0.0);
    const double last = std::accumulate(h.end() - 20, h.end(), 0.0);
    CHECK(last < first);
  }
}

TEST_CASE("median loss falls between the first and last tenth of training") {
  Fixture f;
  auto c = small_config(Strategy::eclipse, 300);
  c.eval_every = 1000;
  auto h = train_run(f.world, f.data, prior_for(c.strategy), c).loss_history;
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  CHECK(median({h.end() - 30, h.end()}) < median({h.begin(), h.begin() + 30}));
}

TEST_CASE("a diverging run raises a numerical error") {
  Fixture f;
  auto c = small_config(Strategy::projection, 50);
  c.base_lr = 1e30;
  CHECK_THROWS_AS(train_run(f.world, f.data, prior_for(c.strategy), c), NumericalError);
}

TEST_CASE("metrics rows serialize with a fixed header") {
  CHECK(metrics_csv_header() == "step,lr,loss_total,loss_proj,loss_cls,eval_top1_seen,eval_top1_holdout,eval_cosine");
  CHECK(metrics_csv_row(MetricsRow{3, 0.5, 1, 2, 3, 1, 0, 0.25}) == "3,0.5,1,2,3,1,0,0.25");
}

}  // TEST_SUITE
