#include "eclab/io/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace eclab {

namespace {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "document" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  bool get(const std::string& key, T& out) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    const Json& v = j_.at(key);
    const std::string where = field(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(where, "expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(where, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(where, "expected a number");
      out = v.get<double>();
    } else {
      static_assert(std::is_unsigned_v<T>);
      if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
      } else if (v.is_number_integer()) {
        fail(where, "expected a nonnegative integer");
      } else {
        fail(where, "expected an integer");
      }
    }
    return true;
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(field(item.key()), "unknown field");
    }
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_world(Reader r, WorldSpec& w) {
  r.get("seed", w.seed);
  r.get("embed_dim", w.embed_dim);
  r.get("noise_sigma", w.noise_sigma);
  if (r.has("attribute_vocab")) {
    const auto& v = r.raw("attribute_vocab");
    const std::string where = r.field("attribute_vocab");
    if (!v.is_array()) Reader::fail(where, "expected an array of string arrays");
    w.attribute_vocab.clear();
    for (const auto& group : v) {
      if (!group.is_array()) Reader::fail(where, "expected an array of string arrays");
      std::vector<std::string> names;
      for (const auto& n : group) {
        if (!n.is_string()) Reader::fail(where, "attribute names must be strings");
        names.push_back(n.get<std::string>());
      }
      w.attribute_vocab.push_back(std::move(names));
    }
  }
  if (r.has("holdout_concepts")) {
    const auto& v = r.raw("holdout_concepts");
    const std::string where = r.field("holdout_concepts");
    if (!v.is_array()) Reader::fail(where, "expected an array of index arrays");
    w.holdout_concepts.clear();
    for (const auto& c : v) {
      if (!c.is_array()) Reader::fail(where, "expected an array of index arrays");
      Concept k;
      for (const auto& i : c) {
        if (!i.is_number_unsigned()) Reader::fail(where, "attribute indices must be nonnegative integers");
        k.attrs.push_back(i.get<std::size_t>());
      }
      w.holdout_concepts.push_back(std::move(k));
    }
  }
  r.finish();
}

void read_dataset(Reader r, DatasetParams& d) {
  r.get("n_train", d.n_train);
  r.get("n_eval_seen", d.n_eval_seen);
  r.get("n_eval_holdout", d.n_eval_holdout);
  r.get("seed", d.seed);
  r.finish();
}

struct PriorOverrides {
  bool embed_dim = false, time_conditioned = false, max_timesteps = false;
};

PriorOverrides read_prior(Reader r, PriorConfig& p) {
  PriorOverrides o;
  o.embed_dim = r.get("embed_dim", p.embed_dim);
  r.get("num_layers", p.num_layers);
  r.get("num_heads", p.num_heads);
  r.get("head_dim", p.head_dim);
  r.get("dropout", p.dropout);
  o.time_conditioned = r.get("time_conditioned", p.time_conditioned);
  o.max_timesteps = r.get("max_timesteps", p.max_timesteps);
  r.finish();
  return o;
}

void read_eval(Reader r, EvalOptions& e) {
  if (r.has("epsilon_mode")) {
    std::string mode;
    r.get("epsilon_mode", mode);
    if (mode == "sampled") e.epsilon_mode = EpsilonMode::sampled;
    else if (mode == "zero") e.epsilon_mode = EpsilonMode::zero;
    else Reader::fail(r.field("epsilon_mode"), "expected \"sampled\" or \"zero\"");
  }
  r.get("inference_steps", e.inference_steps);
  r.get("guidance", e.guidance);
  r.get("eta", e.eta);
  r.get("seed", e.seed);
  r.get("max_samples", e.max_samples);
  r.get("diversity_draws", e.diversity_draws);
  r.get("diversity_prompts", e.diversity_prompts);
  r.finish();
}

void read_train(Reader r, TrainConfig& t) {
  if (r.has("strategy")) {
    std::string s;
    r.get("strategy", s);
    try {
      t.strategy = parse_strategy(s);
    } catch (const std::invalid_argument& e) {
      Reader::fail(r.field("strategy"), e.what());
    }
  }
  r.get("iterations", t.iterations);
  r.get("batch_size", t.batch_size);
  r.get("base_lr", t.base_lr);
  if (r.has("loss")) {
    auto l = r.child("loss");
    l.get("lambda", t.loss.lambda);
    l.get("tau", t.loss.tau);
    l.finish();
  }
  r.get("cond_dropout_prob", t.cond_dropout_prob);
  if (r.has("scheduler")) {
    auto s = r.child("scheduler");
    s.get("T0", t.scheduler.T0);
    s.get("T_mult", t.scheduler.T_mult);
    s.get("min_lr", t.scheduler.min_lr);
    s.finish();
  }
  if (r.has("adam")) {
    auto a = r.child("adam");
    a.get("beta1", t.adam.beta1);
    a.get("beta2", t.adam.beta2);
    a.get("eps", t.adam.eps);
    a.finish();
  }
  r.get("seed", t.seed);
  r.get("eval_every", t.eval_every);
  r.get("grad_clip", t.grad_clip);
  if (r.has("diffusion")) {
    auto d = r.child("diffusion");
    d.get("timesteps", t.diffusion.timesteps);
    d.get("beta_start", t.diffusion.beta_start);
    d.get("beta_end", t.diffusion.beta_end);
    d.finish();
  }
  r.finish();
}

}  // namespace

ExperimentConfig ExperimentConfig::preset_named(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.preset = "paper";
    c.prior = PriorConfig::paper_scale(false);
    c.world.embed_dim = c.prior.embed_dim;
    c.train = TrainConfig::paper();
    return c;
  }
  throw ConfigError("preset: unknown preset '" + name + "' (expected desk or paper)");
}

void ExperimentConfig::validate() const {
  try {
    world.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("world: ") + e.what());
  }
  try {
    prior.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("prior: ") + e.what());
  }
  train.validate();
  check_compatible(prior, train);
  if (world.embed_dim != prior.embed_dim) {
    throw ConfigError("prior.embed_dim (" + std::to_string(prior.embed_dim) + ") must equal world.embed_dim (" +
                      std::to_string(world.embed_dim) + ")");
  }
  if (dataset.n_train == 0) throw ConfigError("dataset.n_train must be positive");
  if (dataset.n_eval_holdout > 0 && world.holdout_concepts.empty()) {
    throw ConfigError("dataset.n_eval_holdout must be 0 when the world has no holdout concepts");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

Json to_json(const WorldSpec& w) {
  Json j;
  j["seed"] = w.seed;
  j["embed_dim"] = w.embed_dim;
  j["attribute_vocab"] = w.attribute_vocab;
  j["noise_sigma"] = w.noise_sigma;
  Json holdout = Json::array();
  for (const auto& c : w.holdout_concepts) holdout.push_back(c.attrs);
  j["holdout_concepts"] = holdout;
  return j;
}

Json to_json(const DatasetParams& d) {
  return Json{{"n_train", d.n_train}, {"n_eval_seen", d.n_eval_seen}, {"n_eval_holdout", d.n_eval_holdout},
              {"seed", d.seed}};
}

Json to_json(const PriorConfig& p) {
  return Json{{"embed_dim", p.embed_dim},     {"num_layers", p.num_layers},
              {"num_heads", p.num_heads},     {"head_dim", p.head_dim},
              {"dropout", p.dropout},         {"time_conditioned", p.time_conditioned},
              {"max_timesteps", p.max_timesteps}};
}

Json to_json(const EvalOptions& e) {
  return Json{{"epsilon_mode", e.epsilon_mode == EpsilonMode::zero ? "zero" : "sampled"},
              {"inference_steps", e.inference_steps},
              {"guidance", e.guidance},
              {"eta", e.eta},
              {"seed", e.seed},
              {"max_samples", e.max_samples},
              {"diversity_draws", e.diversity_draws},
              {"diversity_prompts", e.diversity_prompts}};
}

Json to_json(const TrainConfig& t) {
  Json j;
  j["strategy"] = to_string(t.strategy);
  j["iterations"] = t.iterations;
  j["batch_size"] = t.batch_size;
  j["base_lr"] = t.base_lr;
  j["loss"] = Json{{"lambda", t.loss.lambda}, {"tau", t.loss.tau}};
  j["cond_dropout_prob"] = t.cond_dropout_prob;
  j["scheduler"] = Json{{"T0", t.scheduler.T0}, {"T_mult", t.scheduler.T_mult}, {"min_lr", t.scheduler.min_lr}};
  j["adam"] = Json{{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}};
  j["seed"] = t.seed;
  j["eval_every"] = t.eval_every;
  j["grad_clip"] = t.grad_clip;
  j["diffusion"] = Json{{"timesteps", t.diffusion.timesteps},
                        {"beta_start", t.diffusion.beta_start},
                        {"beta_end", t.diffusion.beta_end}};
  return j;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["preset"] = c.preset;
  j["world"] = to_json(c.world);
  j["dataset"] = to_json(c.dataset);
  j["prior"] = to_json(c.prior);
  j["train"] = to_json(c.train);
  j["eval"] = to_json(c.train.eval);
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig experiment_from_json(const Json& doc) {
  Reader r(doc, "");
  std::string preset = "desk";
  r.get("preset", preset);
  auto c = ExperimentConfig::preset_named(preset);
  if (r.has("world")) read_world(r.child("world"), c.world);
  if (r.has("dataset")) read_dataset(r.child("dataset"), c.dataset);
  PriorOverrides po;
  if (r.has("prior")) po = read_prior(r.child("prior"), c.prior);
  if (r.has("train")) read_train(r.child("train"), c.train);
  if (r.has("eval")) read_eval(r.child("eval"), c.train.eval);
  r.get("output_dir", c.output_dir);
  r.finish();

  // Fields the user left out follow the ones they set.
  if (!po.embed_dim) c.prior.embed_dim = c.world.embed_dim;
  if (!po.time_conditioned) c.prior.time_conditioned = c.train.strategy == Strategy::diffusion;
  if (!po.max_timesteps) c.prior.max_timesteps = c.train.diffusion.timesteps;
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return experiment_from_json(doc);
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json dataset_document(const ExperimentConfig& config) {
  return Json{{"world", to_json(config.world)}, {"dataset", to_json(config.dataset)}};
}

void write_dataset_file(const std::filesystem::path& path, const ExperimentConfig& config) {
  write_text_file(path, dump_json(dataset_document(config)));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string config_hash(const ExperimentConfig& config) { return hex64(fnv1a64(to_json(config).dump())); }

}  // namespace eclab
