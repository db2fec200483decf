#include "eclab/eval/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <sstream>
#include <stdexcept>

#include <omp.h>

namespace eclab {

namespace {

constexpr const char* kProxyNote =
    "Metrics are latent-space proxies: top-1 retrieval against noise-free vision prototypes of every "
    "concept, cosine and squared error to the paired vision embedding, and prediction spread across "
    "input-noise draws. They measure direction of effects, not image-level quality.";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename Fn>
void run_cells(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const int jobs = std::max(1, std::min<int>(cell_jobs(), static_cast<int>(n)));
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void add_config(MetricsReport& report, const ExperimentConfig& config, MetricsRecord& record) {
  record.config_hash = config_hash(config);
  report.configs.emplace(record.config_hash, to_json(config));
}

ExperimentConfig cell_config(const ExperimentConfig& base, Strategy strategy, std::uint64_t seed) {
  auto c = base;
  c.train.strategy = strategy;
  c.train.seed = seed;
  c.prior.time_conditioned = strategy == Strategy::diffusion;
  c.prior.max_timesteps = c.train.diffusion.timesteps;
  return c;
}

TrainedCell train_cell(const Experiment& exp, const ExperimentConfig& config, const std::string& cell) {
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train_run(exp.world, exp.data, config.prior, config.train);
  std::optional<NoiseSchedule> sched;
  if (config.train.strategy == Strategy::diffusion) sched = config.train.diffusion.schedule();
  const auto m = evaluate(exp.world, exp.data, result.net, config.train.eval, sched ? &*sched : nullptr);
  auto record = make_record(to_string(config.train.strategy), cell, config.train.seed, m, seconds_since(t0), "");
  return TrainedCell{config, std::move(result), record};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("report: bad number '" + s + "'");
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void check_ranges(const MetricsRecord& r) {
  auto in = [&](double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi)) {
      throw std::domain_error(std::string(name) + " = " + format_number(v) + " outside [" + format_number(lo) +
                              ", " + format_number(hi) + "] for " + r.strategy + "/" + r.cell);
    }
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  in(r.top1_seen, 0.0, 1.0, "top1_seen");
  in(r.top1_holdout, 0.0, 1.0, "top1_holdout");
  // Cosines of float vectors may overshoot 1 by rounding.
  in(r.mean_cosine, -1.0 - 1e-6, 1.0 + 1e-6, "mean_cosine");
  in(r.latent_mse, 0.0, inf, "latent_mse");
  in(r.diversity_spread, 0.0, inf, "diversity_spread");
  in(r.seconds, 0.0, inf, "seconds");
}

std::vector<MetricsRecord> MetricsReport::cell(const std::string& label) const {
  std::vector<MetricsRecord> out;
  for (const auto& r : records)
    if (r.cell == label) out.push_back(r);
  return out;
}

int cell_jobs() {
  if (const char* env = std::getenv("ECLAB_JOBS"); env && *env) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return omp_get_max_threads();
}

MetricsRecord make_record(const std::string& strategy, const std::string& cell, std::uint64_t seed,
                          const EvalMetrics& m, double seconds, const std::string& hash) {
  MetricsRecord r{strategy,      cell,          seed,
                  m.top1_seen,   m.top1_holdout, m.mean_cosine,
                  m.latent_mse,  m.diversity_spread, seconds,
                  hash};
  check_ranges(r);
  return r;
}

Experiment Experiment::from_config(const ExperimentConfig& config) {
  config.validate();
  auto world = World::build(config.world);
  auto data = make_dataset(world, config.dataset.n_train, config.dataset.n_eval_seen,
                           config.dataset.n_eval_holdout, config.dataset.seed);
  return Experiment{config, std::move(world), std::move(data)};
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::string csv = std::string(kReportHeader) + "\n";
  Json hashes = Json::array();
  for (const auto& r : report.records) {
    check_ranges(r);
    csv += r.strategy + "," + r.cell + "," + std::to_string(r.seed) + "," + format_number(r.top1_seen) + "," +
           format_number(r.top1_holdout) + "," + format_number(r.mean_cosine) + "," +
           format_number(r.latent_mse) + "," + format_number(r.diversity_spread) + "," +
           format_number(r.seconds) + "\n";
    hashes.push_back(r.config_hash);
  }
  Json configs = Json::object();
  for (const auto& [hash, cfg] : report.configs) configs[hash] = cfg;
  Json sidecar{{"note", kProxyNote}, {"columns", kReportHeader}, {"row_config_hash", hashes}, {"configs", configs}};
  write_text_file(path, csv);
  write_text_file(path.string() + ".json", dump_json(sidecar));
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  Json sidecar;
  try {
    sidecar = Json::parse(read_text_file(path.string() + ".json"));
  } catch (const Json::parse_error& e) {
    throw IoError("report sidecar is not valid JSON: " + std::string(e.what()));
  }
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw IoError("report: unexpected CSV header");
  MetricsReport report;
  const auto& hashes = sidecar.at("row_config_hash");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw IoError("report: expected 9 columns in '" + line + "'");
    MetricsRecord r;
    r.strategy = f[0];
    r.cell = f[1];
    r.seed = std::stoull(f[2]);
    r.top1_seen = parse_double(f[3]);
    r.top1_holdout = parse_double(f[4]);
    r.mean_cosine = parse_double(f[5]);
    r.latent_mse = parse_double(f[6]);
    r.diversity_spread = parse_double(f[7]);
    r.seconds = parse_double(f[8]);
    const auto idx = report.records.size();
    if (idx >= hashes.size()) throw IoError("report: sidecar has fewer hashes than rows");
    r.config_hash = hashes.at(idx).get<std::string>();
    report.records.push_back(std::move(r));
  }
  if (hashes.size() != report.records.size()) throw IoError("report: sidecar has more hashes than rows");
  for (const auto& [hash, cfg] : sidecar.at("configs").items()) report.configs.emplace(hash, cfg);
  return report;
}

MetricsReport ablate_prior_steps(const Experiment& exp, const PriorNetwork<float>& net,
                                 const std::vector<std::size_t>& steps_list, const EvalOptions& base,
                                 const std::vector<std::uint64_t>& seeds) {
  if (!net.config().time_conditioned) throw ConfigError("the steps ablation needs a diffusion checkpoint");
  const auto sched = exp.config.train.diffusion.schedule();
  const std::size_t n = steps_list.size() * seeds.size();
  std::vector<MetricsRecord> rows(n);
  std::vector<ExperimentConfig> configs(n, exp.config);
  run_cells(n, [&](std::size_t i) {
    const auto steps = steps_list[i / seeds.size()];
    const auto seed = seeds[i % seeds.size()];
    auto opts = base;
    opts.inference_steps = steps;
    opts.seed = seed;
    configs[i].train.eval = opts;
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = evaluate(exp.world, exp.data, net, opts, &sched);
    rows[i] = make_record("diffusion", "steps=" + std::to_string(steps), seed, m, seconds_since(t0), "");
  });
  MetricsReport report;
  for (std::size_t i = 0; i < n; ++i) {
    add_config(report, configs[i], rows[i]);
    report.records.push_back(rows[i]);
  }
  return report;
}

MetricsReport ablate_eta(const Experiment& exp, const PriorNetwork<float>& net, const std::vector<double>& eta_list,
                         const EvalOptions& base, const std::vector<std::uint64_t>& seeds) {
  if (!net.config().time_conditioned) throw ConfigError("the eta ablation needs a diffusion checkpoint");
  const auto sched = exp.config.train.diffusion.schedule();
  const std::size_t n = eta_list.size() * seeds.size();
  std::vector<MetricsRecord> rows(n);
  std::vector<ExperimentConfig> configs(n, exp.config);
  run_cells(n, [&](std::size_t i) {
    const auto eta = eta_list[i / seeds.size()];
    const auto seed = seeds[i % seeds.size()];
    auto opts = base;
    opts.eta = eta;
    opts.seed = seed;
    configs[i].train.eval = opts;
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = evaluate(exp.world, exp.data, net, opts, &sched);
    rows[i] = make_record("diffusion", "eta=" + format_number(eta), seed, m, seconds_since(t0), "");
  });
  MetricsReport report;
  for (std::size_t i = 0; i < n; ++i) {
    add_config(report, configs[i], rows[i]);
    report.records.push_back(rows[i]);
  }
  return report;
}

MetricsReport ablate_lambda(const Experiment& exp, const std::vector<double>& lambda_list,
                            const std::vector<std::uint64_t>& seeds, std::vector<TrainedCell>* models) {
  const std::size_t n = lambda_list.size() * seeds.size();
  std::vector<std::optional<TrainedCell>> cells(n);
  run_cells(n, [&](std::size_t i) {
    auto cfg = cell_config(exp.config, Strategy::eclipse, seeds[i % seeds.size()]);
    cfg.train.loss.lambda = lambda_list[i / seeds.size()];
    cells[i] = train_cell(exp, cfg, "lambda=" + format_number(cfg.train.loss.lambda));
  });
  MetricsReport report;
  for (auto& c : cells) {
    add_config(report, c->config, c->record);
    report.records.push_back(c->record);
    if (models) models->push_back(std::move(*c));
  }
  return report;
}

MetricsReport compare_strategies(const Experiment& exp, const std::vector<std::uint64_t>& seeds,
                                 std::vector<TrainedCell>* models) {
  const std::vector<Strategy> strategies{Strategy::projection, Strategy::diffusion, Strategy::eclipse};
  const std::size_t n = strategies.size() * seeds.size();
  std::vector<std::optional<TrainedCell>> cells(n);
  run_cells(n, [&](std::size_t i) {
    const auto cfg = cell_config(exp.config, strategies[i / seeds.size()], seeds[i % seeds.size()]);
    cells[i] = train_cell(exp, cfg, "train");
  });
  MetricsReport report;
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    MetricsRecord mean{to_string(strategies[s]), "mean", 0, 0, 0, 0, 0, 0, 0, ""};
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      auto& c = cells[s * seeds.size() + k];
      add_config(report, c->config, c->record);
      report.records.push_back(c->record);
      mean.top1_seen += c->record.top1_seen;
      mean.top1_holdout += c->record.top1_holdout;
      mean.mean_cosine += c->record.mean_cosine;
      mean.latent_mse += c->record.latent_mse;
      mean.diversity_spread += c->record.diversity_spread;
      mean.seconds += c->record.seconds;
      mean.config_hash = c->record.config_hash;
    }
    const double k = static_cast<double>(seeds.size());
    mean.top1_seen /= k;
    mean.top1_holdout /= k;
    mean.mean_cosine /= k;
    mean.latent_mse /= k;
    mean.diversity_spread /= k;
    if (!seeds.empty()) report.records.push_back(mean);
  }
  if (models)
    for (auto& c : cells) models->push_back(std::move(*c));
  return report;
}

}  // namespace eclab
