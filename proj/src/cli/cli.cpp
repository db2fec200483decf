#include "eclab/cli/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "eclab/eval/gradcheck_suite.hpp"
#include "eclab/eval/harness.hpp"
#include "eclab/io/checkpoint.hpp"
#include "eclab/io/config.hpp"

namespace eclab {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("--seeds: '" + item + "' is not a nonnegative integer");
    }
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw ConfigError("--seeds: need at least one seed");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) out.push_back(std::stod(item, &used));
      else out.push_back(static_cast<T>(std::stoull(item, &used)));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

void print_report(std::ostream& out, const MetricsReport& report) {
  out << kReportHeader << "\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : report.records) {
    out << r.strategy << ',' << r.cell << ',' << r.seed << ',' << r.top1_seen << ',' << r.top1_holdout << ','
        << r.mean_cosine << ',' << r.latent_mse << ',' << r.diversity_spread << ',' << r.seconds << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

fs::path resolve_out(const std::string& flag, const ExperimentConfig& cfg) {
  return flag.empty() ? fs::path(cfg.output_dir) : fs::path(flag);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const auto cfg = load_experiment(config_path);
  write_dataset_file(out_path, cfg);
  // Regenerating the dataset validates the world spec and reports the split sizes.
  const auto exp = Experiment::from_config(cfg);
  out << "wrote " << out_path << " (" << exp.data.train.size() << " train, " << exp.data.eval_seen.size()
      << " eval seen, " << exp.data.eval_holdout.size() << " eval holdout)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_flag, std::ostream& out) {
  const auto cfg = load_experiment(config_path);
  const auto dir = resolve_out(out_flag, cfg);
  fs::create_directories(dir);
  write_text_file(dir / "config.json", dump_json(to_json(cfg)));
  const auto exp = Experiment::from_config(cfg);

  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open " + (dir / "metrics.csv").string());
  csv << metrics_csv_header() << "\n";
  const auto result = train_run(exp.world, exp.data, cfg.prior, cfg.train, [&](const MetricsRow& row) {
    csv << metrics_csv_row(row) << "\n" << std::flush;
    out << "step " << row.step << "  loss " << row.loss_total << "  top1 seen " << row.eval_top1_seen
        << "  holdout " << row.eval_top1_holdout << "  cosine " << row.eval_cosine << "\n";
  });
  save_checkpoint(dir / "checkpoint.eclp", Checkpoint{cfg, result.net, result.state});
  out << "wrote " << (dir / "checkpoint.eclp").string() << "\n";
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint, split, out;
  std::optional<std::size_t> steps;
  std::optional<double> guidance, eta;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  auto ckpt = load_checkpoint(f.checkpoint);
  const bool diffusion = ckpt.net.config().time_conditioned;
  if (!diffusion && (f.steps || f.guidance || f.eta)) {
    throw ConfigError("--steps/--guidance/--eta apply only to diffusion checkpoints");
  }
  const auto part = parse_split_part(f.split);
  if (part == SplitPart::train) throw ConfigError("--split must be seen or holdout");
  auto opts = ckpt.config.train.eval;
  if (f.steps) opts.inference_steps = *f.steps;
  if (f.guidance) opts.guidance = *f.guidance;
  if (f.eta) opts.eta = *f.eta;
  if (f.seed) opts.seed = *f.seed;
  auto cfg = ckpt.config;
  cfg.train.eval = opts;
  cfg.train.validate();

  auto exp = Experiment::from_config(ckpt.config);
  if (part == SplitPart::eval_seen) exp.data.eval_holdout.clear();
  else exp.data.eval_seen.clear();
  std::optional<NoiseSchedule> sched;
  if (diffusion) sched = cfg.train.diffusion.schedule();
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = evaluate(exp.world, exp.data, ckpt.net, opts, sched ? &*sched : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  MetricsReport report;
  auto rec = make_record(to_string(cfg.train.strategy), "split=" + to_string(part), opts.seed, m, secs,
                         config_hash(cfg));
  report.records.push_back(rec);
  report.configs.emplace(rec.config_hash, to_json(cfg));
  const fs::path path = f.out.empty() ? fs::path(f.checkpoint).parent_path() / ("eval_" + to_string(part) + ".csv")
                                      : fs::path(f.out);
  write_report(report, path);
  print_report(out, report);
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

struct AblateFlags {
  std::string kind, config, checkpoint, seeds = "1,2,3", values, out;
};

int cmd_ablate(const AblateFlags& f, std::ostream& out) {
  if (f.kind != "steps" && f.kind != "eta" && f.kind != "lambda") {
    throw ConfigError("--kind must be steps, eta or lambda");
  }
  const auto seeds = parse_seeds(f.seeds);
  MetricsReport report;
  fs::path dir;
  if (f.kind == "lambda") {
    if (f.config.empty()) throw ConfigError("ablate --kind lambda needs --config");
    auto cfg = load_experiment(f.config);
    cfg.train.strategy = Strategy::eclipse;
    cfg.prior.time_conditioned = false;
    const auto exp = Experiment::from_config(cfg);
    const auto lambdas = f.values.empty() ? kDefaultLambdaList : parse_list<double>(f.values, "--values");
    report = ablate_lambda(exp, lambdas, seeds);
    dir = resolve_out(f.out, cfg);
  } else {
    std::optional<Checkpoint> ckpt;
    ExperimentConfig cfg;
    if (!f.checkpoint.empty()) {
      ckpt = load_checkpoint(f.checkpoint);
      cfg = ckpt->config;
    } else if (!f.config.empty()) {
      cfg = load_experiment(f.config);
      cfg.train.strategy = Strategy::diffusion;
      cfg.prior.time_conditioned = true;
      cfg.prior.max_timesteps = cfg.train.diffusion.timesteps;
    } else {
      throw ConfigError("ablate --kind " + f.kind + " needs --checkpoint or --config");
    }
    if (!cfg.prior.time_conditioned) throw ConfigError("the " + f.kind + " ablation needs a diffusion checkpoint");
    const auto exp = Experiment::from_config(cfg);
    std::optional<PriorNetwork<float>> net;
    if (ckpt) {
      net = ckpt->net;
    } else {
      out << "training a diffusion prior for the sweep\n";
      net = train_run(exp.world, exp.data, cfg.prior, cfg.train).net;
    }
    if (f.kind == "steps") {
      const auto steps = f.values.empty() ? kDefaultStepsList : parse_list<std::size_t>(f.values, "--values");
      report = ablate_prior_steps(exp, *net, steps, cfg.train.eval, seeds);
    } else {
      const auto etas = f.values.empty() ? kDefaultEtaList : parse_list<double>(f.values, "--values");
      report = ablate_eta(exp, *net, etas, cfg.train.eval, seeds);
    }
    dir = f.out.empty() ? (ckpt ? fs::path(f.checkpoint).parent_path() : fs::path(cfg.output_dir)) : fs::path(f.out);
  }
  const auto path = dir / ("ablate_" + f.kind + ".csv");
  write_report(report, path);
  print_report(out, report);
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& seeds_text, const std::string& out_flag,
                std::ostream& out) {
  const auto cfg = load_experiment(config_path);
  const auto seeds = parse_seeds(seeds_text);
  const auto exp = Experiment::from_config(cfg);
  const auto report = compare_strategies(exp, seeds);
  const auto path = resolve_out(out_flag, cfg) / "compare.csv";
  write_report(report, path);
  print_report(out, report);
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

int cmd_grad_check(std::size_t n_seeds, std::ostream& out) {
  const auto entries = run_gradcheck_suite(n_seeds, 1);
  std::map<std::string, double> worst;
  bool ok = true;
  for (const auto& e : entries) {
    worst[e.name] = std::max(worst[e.name], e.result.max_rel_error);
    ok = ok && e.passed();
  }
  out << std::left;
  for (const auto& name : gradcheck_case_names()) {
    out << std::setw(26) << name << " max rel error " << std::scientific << std::setprecision(3) << worst[name]
        << (worst[name] < kGradCheckTolerance ? "  ok" : "  FAIL") << "\n";
  }
  out << (ok ? "all gradient checks passed" : "gradient check FAILED") << " (" << entries.size() << " checks, "
      << n_seeds << " seeds, tolerance " << kGradCheckTolerance << ")\n";
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate text-to-image-embedding priors on a synthetic latent world", "eclab"};
  app.require_subcommand(1);

  std::string config, out_path, seeds = "1,2,3";
  auto* gen = app.add_subcommand("gen-data", "Write the dataset spec file (world spec and seeds)");
  gen->add_option("--config", config, "Experiment JSON")->required();
  gen->add_option("--out", out_path, "Output file")->required();

  auto* train = app.add_subcommand("train", "Train one prior; writes checkpoint, metrics CSV and resolved config");
  train->add_option("--config", config, "Experiment JSON")->required();
  train->add_option("--out", out_path, "Output directory (default: output_dir from the config)");

  EvalFlags ef;
  std::size_t steps = 0;
  double guidance = 0.0, eta = 0.0;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one eval split");
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ef.split, "seen or holdout")->required();
  auto* o_steps = eval->add_option("--steps", steps, "Sampler steps (diffusion only)");
  auto* o_guid = eval->add_option("--guidance", guidance, "Guidance scale (diffusion only)");
  auto* o_eta = eval->add_option("--eta", eta, "Sampler noise scale (diffusion only)");
  auto* o_seed = eval->add_option("--seed", eval_seed, "Evaluation seed");
  eval->add_option("--out", ef.out, "Report CSV path");

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "Run the steps, eta or lambda sweep");
  ablate->add_option("--kind", af.kind, "steps, eta or lambda")->required();
  ablate->add_option("--config", af.config, "Experiment JSON");
  ablate->add_option("--checkpoint", af.checkpoint, "Diffusion checkpoint (steps and eta sweeps)");
  ablate->add_option("--seeds", af.seeds, "Comma-separated seeds");
  ablate->add_option("--values", af.values, "Comma-separated sweep values (default: built-in list)");
  ablate->add_option("--out", af.out, "Output directory");

  auto* compare = app.add_subcommand("compare", "Train all three strategies with matched budgets");
  compare->add_option("--config", config, "Experiment JSON")->required();
  compare->add_option("--seeds", seeds, "Comma-separated seeds");
  compare->add_option("--out", out_path, "Output directory");

  std::size_t gc_seeds = 5;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every gradient");
  grad->add_option("--seeds", gc_seeds, "Seeds per case")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out_path, out);
    if (*train) return cmd_train(config, out_path, out);
    if (*eval) {
      if (o_steps->count()) ef.steps = steps;
      if (o_guid->count()) ef.guidance = guidance;
      if (o_eta->count()) ef.eta = eta;
      if (o_seed->count()) ef.seed = eval_seed;
      return cmd_eval(ef, out);
    }
    if (*ablate) return cmd_ablate(af, out);
    if (*compare) return cmd_compare(config, seeds, out_path, out);
    if (*grad) return cmd_grad_check(gc_seeds, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ChecksumError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace eclab
