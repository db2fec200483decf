#include "eclab/eval/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "eclab/gradcore/ops.hpp"

namespace eclab {

namespace {

constexpr std::uint64_t kSeenStream = 101;
constexpr std::uint64_t kHoldoutStream = 102;
constexpr std::uint64_t kDiversityStream = 103;

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::vector<PairSample> head(const std::vector<PairSample>& v, std::size_t limit) {
  if (limit == 0 || v.size() <= limit) return v;
  return std::vector<PairSample>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit));
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "projection") return Strategy::projection;
  if (name == "diffusion") return Strategy::diffusion;
  if (name == "eclipse") return Strategy::eclipse;
  throw std::invalid_argument("unknown strategy '" + name + "' (expected projection, diffusion or eclipse)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::projection: return "projection";
    case Strategy::diffusion: return "diffusion";
    case Strategy::eclipse: return "eclipse";
  }
  return "?";
}

template <typename T>
double retrieval_top1(const Tensor<T>& predictions, const Tensor<T>& candidates,
                      std::span<const std::size_t> truth_index) {
  if (predictions.cols() != candidates.cols()) {
    throw ShapeError("retrieval_top1: dimension mismatch " + shape_string(predictions.shape()) +
                     " vs " + shape_string(candidates.shape()));
  }
  if (truth_index.size() != predictions.rows()) {
    throw ShapeError("retrieval_top1: need one truth index per prediction row");
  }
  const std::size_t m = candidates.rows();
  const auto table = cosine_table(predictions, candidates);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.rows(); ++i) {
    if (truth_index[i] >= m) throw std::out_of_range("retrieval_top1: truth index out of range");
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (table[i * m + j] > table[i * m + best]) best = j;
    }
    if (best == truth_index[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.rows());
}

template <typename T>
double mean_cosine(const Tensor<T>& predictions, const Tensor<T>& targets) {
  check_same(predictions, targets, "mean_cosine");
  double total = 0.0;
  for (std::size_t r = 0; r < predictions.rows(); ++r) total += cosine<T>(predictions.row(r), targets.row(r));
  return total / static_cast<double>(predictions.rows());
}

template <typename T>
double latent_mse(const Tensor<T>& predictions, const Tensor<T>& targets) {
  check_same(predictions, targets, "latent_mse");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.numel(); ++i) {
    const double d = static_cast<double>(predictions[i]) - static_cast<double>(targets[i]);
    total += d * d;
  }
  return total / static_cast<double>(predictions.rows());
}

double diversity_spread(const DrawPredictor& predict, const Tensor<float>& z_y, std::size_t k_draws,
                        std::uint64_t seed) {
  if (k_draws < 2) throw std::invalid_argument("diversity_spread needs at least two draws");
  std::vector<Tensor<float>> draws;
  for (std::size_t k = 0; k < k_draws; ++k) draws.push_back(predict(z_y, mix_seed(seed, k)));
  double total = 0.0;
  const std::size_t pairs = k_draws * (k_draws - 1) / 2;
  for (std::size_t r = 0; r < z_y.rows(); ++r) {
    double prompt = 0.0;
    for (std::size_t a = 0; a < k_draws; ++a)
      for (std::size_t b = a + 1; b < k_draws; ++b)
        prompt += 1.0 - cosine<float>(draws[a].row(r), draws[b].row(r));
    total += prompt / static_cast<double>(pairs);
  }
  // Rounding can leave identical draws a hair below zero.
  return std::max(0.0, total / static_cast<double>(z_y.rows()));
}

Tensor<float> predict_embeddings(const PriorNetwork<float>& net, const Tensor<float>& z_y,
                                 const EvalOptions& options, const NoiseSchedule* schedule,
                                 std::uint64_t seed) {
  if (net.config().time_conditioned) {
    if (schedule == nullptr) throw std::invalid_argument("diffusion evaluation needs a noise schedule");
    SamplerOptions so{options.inference_steps, options.guidance, options.eta};
    return sample_loop(net, *schedule, z_y, so, seed);
  }
  Tensor<float> eps(z_y.shape());
  if (options.epsilon_mode == EpsilonMode::sampled) {
    Rng rng(seed);
    eps = gaussian_tensor<float>(z_y.shape(), rng);
  }
  return predict_prior(net, eps, z_y);
}

EvalMetrics evaluate(const World& world, const DatasetSplit& split, const PriorNetwork<float>& net,
                     const EvalOptions& options, const NoiseSchedule* schedule, bool with_diversity) {
  const auto prototypes = world.vision_prototypes();
  EvalMetrics m;
  double cos_total = 0.0, mse_total = 0.0;
  std::size_t rows = 0;
  auto run = [&](const std::vector<PairSample>& part, std::uint64_t stream) -> double {
    if (part.empty()) return 0.0;
    const auto zy = stack_text<float>(part);
    const auto zx = stack_vision<float>(part);
    const auto pred = predict_embeddings(net, zy, options, schedule, mix_seed(options.seed, stream));
    std::vector<std::size_t> truth;
    for (const auto& s : part) truth.push_back(world.concept_index(s.composition));
    cos_total += mean_cosine(pred, zx) * static_cast<double>(part.size());
    mse_total += latent_mse(pred, zx) * static_cast<double>(part.size());
    rows += part.size();
    return retrieval_top1(pred, prototypes, std::span<const std::size_t>(truth));
  };
  const auto seen = head(split.eval_seen, options.max_samples);
  const auto holdout = head(split.eval_holdout, options.max_samples);
  m.top1_seen = run(seen, kSeenStream);
  m.top1_holdout = run(holdout, kHoldoutStream);
  if (rows > 0) {
    m.mean_cosine = cos_total / static_cast<double>(rows);
    m.latent_mse = mse_total / static_cast<double>(rows);
  }
  if (with_diversity && options.diversity_draws >= 2) {
    const auto& pool = holdout.empty() ? seen : holdout;
    const auto prompts = head(pool, options.diversity_prompts);
    if (!prompts.empty()) {
      const auto zy = stack_text<float>(prompts);
      const DrawPredictor predictor = [&](const Tensor<float>& z, std::uint64_t s) {
        return predict_embeddings(net, z, options, schedule, s);
      };
      m.diversity_spread = diversity_spread(predictor, zy, options.diversity_draws,
                                            mix_seed(options.seed, kDiversityStream));
    }
  }
  return m;
}

template double retrieval_top1<float>(const Tensor<float>&, const Tensor<float>&,
                                      std::span<const std::size_t>);
template double retrieval_top1<double>(const Tensor<double>&, const Tensor<double>&,
                                       std::span<const std::size_t>);
template double mean_cosine<float>(const Tensor<float>&, const Tensor<float>&);
template double mean_cosine<double>(const Tensor<double>&, const Tensor<double>&);
template double latent_mse<float>(const Tensor<float>&, const Tensor<float>&);
template double latent_mse<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace eclab
