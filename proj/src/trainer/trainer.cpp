#include "eclab/trainer/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "eclab/gradcore/ops.hpp"

namespace eclab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("train.base_lr must be positive");
  if (!(cond_dropout_prob >= 0.0 && cond_dropout_prob <= 1.0)) {
    throw ConfigError("train.cond_dropout_prob must lie in [0, 1]");
  }
  if (scheduler.T0 == 0) throw ConfigError("train.scheduler.T0 must be positive");
  if (scheduler.T_mult == 0) throw ConfigError("train.scheduler.T_mult must be at least 1");
  if (!(scheduler.min_lr >= 0.0)) throw ConfigError("train.scheduler.min_lr must be nonnegative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("train.adam.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("train.adam.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("train.adam.eps must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be nonnegative");
  try {
    loss.validate();
  } catch (const LossError& e) {
    throw ConfigError(std::string("train.loss: ") + e.what());
  }
  if (eval.inference_steps == 0 || eval.inference_steps > diffusion.timesteps) {
    throw ConfigError("eval.inference_steps must lie in [1, timesteps]");
  }
  if (!(eval.eta >= 0.0)) throw ConfigError("eval.eta must be nonnegative");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.loss.lambda = 0.2;
  c.loss.tau = 0.07;
  c.base_lr = 5e-5;
  c.batch_size = 256;
  c.diffusion.timesteps = 1000;
  c.eval.inference_steps = 25;
  c.eval.guidance = 4.0;
  c.cond_dropout_prob = 0.10;
  return c;
}

void check_compatible(const PriorConfig& prior, const TrainConfig& train) {
  const bool diffusion = train.strategy == Strategy::diffusion;
  if (prior.time_conditioned != diffusion) {
    throw ConfigError("strategy " + to_string(train.strategy) + " needs prior.time_conditioned = " +
                      (diffusion ? "true" : "false"));
  }
  if (diffusion && prior.max_timesteps != train.diffusion.timesteps) {
    throw ConfigError("prior.max_timesteps must equal train.diffusion.timesteps");
  }
}

AdamState make_adam_state(const PriorNetwork<float>& net) {
  AdamState s;
  for (const auto& p : net.params()) {
    s.m.emplace_back(p.value.numel(), 0.0f);
    s.v.emplace_back(p.value.numel(), 0.0f);
  }
  return s;
}

void adam_step(std::vector<NamedTensor<float>>& params, const std::vector<std::vector<float>>& grads,
               AdamState& state, double lr, const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].value.numel();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adam_step: size mismatch for " + params[i].name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      const double vj = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      w[j] = static_cast<float>(static_cast<double>(w[j]) - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

double warm_restart_lr(std::size_t step, double base_lr, std::size_t T0, std::size_t T_mult, double min_lr) {
  if (T0 == 0) return base_lr;
  std::size_t cycle = T0, pos = step;
  while (pos >= cycle) {
    pos -= cycle;
    cycle *= std::max<std::size_t>(T_mult, 1);
  }
  if (pos == 0) return base_lr;
  const double frac = static_cast<double>(pos) / static_cast<double>(cycle);
  return min_lr + (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

std::vector<std::uint8_t> condition_dropout_mask(std::size_t batch_size, double prob, Rng& rng) {
  std::vector<std::uint8_t> mask(batch_size, 0);
  for (auto& m : mask) m = rng.bernoulli(prob) ? 1 : 0;
  return mask;
}

std::string metrics_csv_header() {
  return "step,lr,loss_total,loss_proj,loss_cls,eval_top1_seen,eval_top1_holdout,eval_cosine";
}

std::string metrics_csv_row(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_proj << ',' << r.loss_cls << ','
     << r.eval_top1_seen << ',' << r.eval_top1_holdout << ',' << r.eval_cosine;
  return os.str();
}

TrainState initial_state(const PriorNetwork<float>& net, const TrainConfig& config) {
  TrainState s;
  s.adam = make_adam_state(net);
  s.rng = Rng(mix_seed(config.seed, 0x7a11));
  return s;
}

namespace {

void clip_global_norm(std::vector<std::vector<float>>& grads, double threshold) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (float v : g) ss += static_cast<double>(v) * v;
  const double norm = std::sqrt(ss);
  if (norm <= threshold) return;
  const float scale = static_cast<float>(threshold / norm);
  for (auto& g : grads)
    for (float& v : g) v *= scale;
}

std::string diagnostic(std::size_t step, const StepLoss& l, double lr) {
  std::ostringstream os;
  os << "non-finite training loss at step " << step << " (lr " << lr << ", total " << l.total << ", proj "
     << l.proj << ", cls " << l.cls << ")";
  return os.str();
}

bool better(const MetricsRow& a, const MetricsRow& b) {
  if (a.eval_top1_holdout != b.eval_top1_holdout) return a.eval_top1_holdout > b.eval_top1_holdout;
  return a.eval_top1_seen > b.eval_top1_seen;
}

}  // namespace

StepLoss train_step(const DatasetSplit& data, PriorNetwork<float>& net, TrainState& state,
                    const TrainConfig& config, const NoiseSchedule* schedule) {
  auto& rng = state.rng;
  const auto batch = sample_train_batch(data, config.batch_size, rng);
  const auto zy = stack_text<float>(batch);
  const auto zx = stack_vision<float>(batch);
  const std::size_t n = batch.size();
  Rng* dropout_rng = net.config().dropout > 0.0 ? &rng : nullptr;

  Tape<float> tape;
  const auto bound = bind(tape, net, true);
  StepLoss out;
  Var<float> loss_node;
  switch (config.strategy) {
    case Strategy::projection: {
      const auto eps = gaussian_tensor<float>(zy.shape(), rng);
      auto pred = forward_prior(bound, tape.constant(eps), tape.constant(zy), dropout_rng);
      const auto l = proj_loss(pred, tape.constant(zx));
      loss_node = l.node;
      out.proj = out.total = l.value;
      // monitored only; not part of the objective
      out.cls = contrastive_loss_value(pred.value(), zy, config.loss.tau);
      break;
    }
    case Strategy::eclipse: {
      const auto eps = gaussian_tensor<float>(zy.shape(), rng);
      auto pred = forward_prior(bound, tape.constant(eps), tape.constant(zy), dropout_rng);
      const auto l = eclipse_loss(pred, tape.constant(zx), tape.constant(zy), config.loss);
      loss_node = l.total;
      out.total = l.total_value;
      out.proj = l.proj;
      out.cls = l.cls;
      break;
    }
    case Strategy::diffusion: {
      if (schedule == nullptr) throw ConfigError("diffusion training needs a noise schedule");
      std::vector<int> t(n);
      for (auto& ti : t) ti = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(schedule->steps)));
      const auto eps = gaussian_tensor<float>(zx.shape(), rng);
      const auto mask = condition_dropout_mask(n, config.cond_dropout_prob, rng);
      const auto l = diffusion_prior_loss(bound, zx, tape.constant(zy), std::span<const int>(t), eps,
                                          *schedule, std::span<const std::uint8_t>(mask));
      loss_node = l.node;
      out.proj = out.total = l.value;
      break;
    }
  }
  const double lr = warm_restart_lr(state.step, config.base_lr, config.scheduler.T0, config.scheduler.T_mult,
                                    config.scheduler.min_lr);
  if (!std::isfinite(out.total)) throw NumericalError(diagnostic(state.step, out, lr));

  tape.backward(loss_node);
  std::vector<std::vector<float>> grads;
  grads.reserve(bound.params.size());
  for (const auto& p : bound.params) grads.push_back(tape.grad(p));
  for (const auto& g : grads)
    for (float v : g)
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient at step " + std::to_string(state.step));
  if (config.grad_clip > 0.0) clip_global_norm(grads, config.grad_clip);

  adam_step(net.params(), grads, state.adam, lr, config.adam);
  state.step += 1;
  return out;
}

TrainResult resume_run(const World& world, const DatasetSplit& data, PriorNetwork<float> net,
                       TrainState state, const TrainConfig& config, std::size_t until, const RowSink& sink) {
  config.validate();
  check_compatible(net.config(), config);
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (until == 0) until = config.iterations;
  std::optional<NoiseSchedule> schedule;
  if (config.strategy == Strategy::diffusion) schedule = config.diffusion.schedule();
  const NoiseSchedule* sched = schedule ? &*schedule : nullptr;

  TrainResult result{std::move(net), std::move(state), {}, {}};
  auto& st = result.state;
  while (st.step < until) {
    const double lr = warm_restart_lr(st.step, config.base_lr, config.scheduler.T0, config.scheduler.T_mult,
                                      config.scheduler.min_lr);
    const auto l = train_step(data, result.net, st, config, sched);
    result.loss_history.push_back(l.total);
    if (st.step % config.eval_every == 0 || st.step == config.iterations) {
      MetricsRow row{st.step, lr, l.total, l.proj, l.cls, 0.0, 0.0, 0.0};
      const auto m = evaluate(world, data, result.net, config.eval, sched, false);
      row.eval_top1_seen = m.top1_seen;
      row.eval_top1_holdout = m.top1_holdout;
      row.eval_cosine = m.mean_cosine;
      st.last = row;
      if (!st.best || better(row, *st.best)) st.best = row;
      result.log.push_back(row);
      if (sink) sink(row);
    }
  }
  return result;
}

TrainResult train_run(const World& world, const DatasetSplit& data, const PriorConfig& prior,
                      const TrainConfig& config, const RowSink& sink) {
  config.validate();
  check_compatible(prior, config);
  if (data.train.empty()) throw ConfigError("training split is empty");
  auto net = PriorNetwork<float>::init(prior, mix_seed(config.seed, 0x1417));
  auto state = initial_state(net, config);
  if (config.iterations == 0) return TrainResult{std::move(net), std::move(state), {}, {}};
  return resume_run(world, data, std::move(net), std::move(state), config, config.iterations, sink);
}

}  // namespace eclab
