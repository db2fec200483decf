#include "eclab/eval/gradcheck_suite.hpp"

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>

#include "eclab/diffusion/diffusion.hpp"
#include "eclab/gradcore/ops.hpp"
#include "eclab/objectives/losses.hpp"
#include "eclab/prior/prior_net.hpp"

namespace eclab {

namespace {

using Vars = std::vector<Var<double>>;
using D = double;

Tensor<D> randn(Shape shape, Rng& rng, double std = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.data()) v = std * rng.normal();
  return t;
}

// Contracts an op output with fixed random weights so every output
// element contributes a distinct gradient.
Var<D> contract(Tape<D>& tape, Var<D> out, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xc0de));
  auto w = tape.constant(randn(out.shape(), rng));
  return ops::sum(ops::mul(out, w));
}

struct Case {
  std::vector<Tensor<D>> inputs;
  MultiScalarFn fn;
};

using CaseBuilder = std::function<Case(std::uint64_t)>;

Case unary(Shape shape, std::function<Var<D>(Var<D>)> op, std::uint64_t seed) {
  Rng rng(seed);
  return {{randn(std::move(shape), rng)},
          [op, seed](Tape<D>& tape, const Vars& v) { return contract(tape, op(v[0]), seed); }};
}

Case binary(Shape a, Shape b, std::function<Var<D>(Var<D>, Var<D>)> op, std::uint64_t seed) {
  Rng rng(seed);
  auto ta = randn(std::move(a), rng);
  auto tb = randn(std::move(b), rng);
  return {{ta, tb}, [op, seed](Tape<D>& tape, const Vars& v) { return contract(tape, op(v[0], v[1]), seed); }};
}

PriorConfig tiny_config(bool time_conditioned) {
  PriorConfig c;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 1;
  c.head_dim = 8;
  c.time_conditioned = time_conditioned;
  return c;
}

// Initial weights are tiny; a wider random draw keeps gradients well away
// from the absolute floor of the relative-error measure.
std::vector<Tensor<D>> tiny_params(const PriorConfig& cfg, std::uint64_t seed) {
  auto net = PriorNetwork<D>::init(cfg, seed);
  Rng rng(mix_seed(seed, 0x7e57));
  std::vector<Tensor<D>> out;
  for (const auto& p : net.params()) {
    auto t = p.value;
    for (auto& v : t.data()) v += 0.3 * rng.normal();
    out.push_back(std::move(t));
  }
  return out;
}

BoundPrior<D> rebind(const PriorNetwork<D>& shape_source, const Vars& v, std::size_t count) {
  BoundPrior<D> b;
  b.net = &shape_source;
  b.params.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(count));
  return b;
}

// Composition cases keep the network (for its config and index) alive in
// the closure; the parameter values come from the checked inputs.
Case network_case(const std::string& which, std::uint64_t seed) {
  const bool diffusion = which == "diffusion_prior_loss";
  const auto cfg = tiny_config(diffusion);
  auto params = tiny_params(cfg, seed);
  auto net = std::make_shared<PriorNetwork<D>>(PriorNetwork<D>::init(cfg, seed));
  const std::size_t np = params.size();
  Rng rng(mix_seed(seed, 0xda7a));
  auto eps = randn({3, 8}, rng);
  auto zy = randn({3, 8}, rng, 0.5);
  auto zx = randn({3, 8}, rng, 0.5);
  Case c;
  c.inputs = params;
  c.inputs.push_back(zy);
  if (diffusion) {
    auto sched = std::make_shared<NoiseSchedule>(make_linear_schedule());
    std::vector<int> t{static_cast<int>(rng.uniform_int(1, 1000)), static_cast<int>(rng.uniform_int(1, 1000)),
                       static_cast<int>(rng.uniform_int(1, 1000))};
    c.fn = [net, np, sched, t, eps, zx](Tape<D>&, const Vars& v) {
      const auto b = rebind(*net, v, np);
      const std::vector<std::uint8_t> mask{0, 1, 0};
      return diffusion_prior_loss(b, zx, v[np], std::span<const int>(t), eps, *sched,
                                  std::span<const std::uint8_t>(mask))
          .node;
    };
    return c;
  }
  c.inputs.push_back(zx);
  c.fn = [net, np, which, eps](Tape<D>& tape, const Vars& v) {
    const auto b = rebind(*net, v, np);
    auto pred = forward_prior(b, tape.constant(eps), v[np]);
    if (which == "proj_loss") return proj_loss(pred, v[np + 1]).node;
    if (which == "contrastive_loss") return contrastive_loss(pred, v[np], 0.07).node;
    return eclipse_loss(pred, v[np + 1], v[np], LossConfig{}).total;
  };
  return c;
}

const std::vector<std::pair<std::string, CaseBuilder>>& cases() {
  static const std::vector<std::pair<std::string, CaseBuilder>> table = {
      {"matmul", [](std::uint64_t s) { return binary({3, 4}, {4, 5}, ops::matmul<D>, s); }},
      {"affine",
       [](std::uint64_t s) {
         Rng rng(s);
         return Case{{randn({3, 4}, rng), randn({4, 5}, rng), randn({5}, rng)},
                     [s](Tape<D>& tape, const Vars& v) { return contract(tape, ops::affine(v[0], v[1], v[2]), s); }};
       }},
      {"add", [](std::uint64_t s) { return binary({3, 4}, {3, 4}, ops::add<D>, s); }},
      {"sub", [](std::uint64_t s) { return binary({3, 4}, {3, 4}, ops::sub<D>, s); }},
      {"mul", [](std::uint64_t s) { return binary({3, 4}, {3, 4}, ops::mul<D>, s); }},
      {"scale", [](std::uint64_t s) { return unary({3, 4}, [](Var<D> x) { return ops::scale(x, -1.7); }, s); }},
      {"sum",
       [](std::uint64_t s) {
         Rng rng(s);
         return Case{{randn({3, 4}, rng)}, [](Tape<D>&, const Vars& v) {
                       return ops::scale(ops::sum(v[0]), 0.5);
                     }};
       }},
      {"add_row", [](std::uint64_t s) { return binary({3, 4}, {4}, ops::add_row<D>, s); }},
      {"layer_norm",
       [](std::uint64_t s) {
         Rng rng(s);
         return Case{{randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)},
                     [s](Tape<D>& tape, const Vars& v) {
                       return contract(tape, ops::layer_norm(v[0], v[1], v[2]), s);
                     }};
       }},
      {"softmax", [](std::uint64_t s) { return unary({3, 5}, ops::softmax<D>, s); }},
      {"gelu", [](std::uint64_t s) { return unary({3, 5}, ops::gelu<D>, s); }},
      {"l2_normalize",
       [](std::uint64_t s) { return unary({3, 5}, [](Var<D> x) { return ops::l2_normalize(x); }, s); }},
      {"cosine_similarity_matrix",
       [](std::uint64_t s) {
         return binary({3, 4}, {5, 4}, [](Var<D> a, Var<D> b) { return ops::cosine_similarity_matrix(a, b); }, s);
       }},
      {"self_attention",
       [](std::uint64_t s) {
         Rng rng(s);
         return Case{{randn({6, 8}, rng), randn({6, 8}, rng), randn({6, 8}, rng)},
                     [s](Tape<D>& tape, const Vars& v) {
                       return contract(tape, ops::self_attention(v[0], v[1], v[2], 3, 2), s);
                     }};
       }},
      {"interleave_tokens",
       [](std::uint64_t s) {
         Rng rng(s);
         return Case{{randn({2, 4}, rng), randn({2, 4}, rng), randn({2, 4}, rng)},
                     [s](Tape<D>& tape, const Vars& v) { return contract(tape, ops::interleave_tokens(v), s); }};
       }},
      {"broadcast_rows",
       [](std::uint64_t s) { return unary({4}, [](Var<D> x) { return ops::broadcast_rows(x, 3); }, s); }},
      {"take_token",
       [](std::uint64_t s) { return unary({6, 4}, [](Var<D> x) { return ops::take_token(x, 3, 1); }, s); }},
      {"replace_rows",
       [](std::uint64_t s) {
         return binary({3, 4}, {4},
                       [](Var<D> x, Var<D> row) {
                         static const std::vector<std::uint8_t> mask{1, 0, 1};
                         return ops::replace_rows(x, row, std::span<const std::uint8_t>(mask));
                       },
                       s);
       }},
      {"proj_loss", [](std::uint64_t s) { return network_case("proj_loss", s); }},
      {"contrastive_loss", [](std::uint64_t s) { return network_case("contrastive_loss", s); }},
      {"eclipse_loss", [](std::uint64_t s) { return network_case("eclipse_loss", s); }},
      {"diffusion_prior_loss", [](std::uint64_t s) { return network_case("diffusion_prior_loss", s); }},
  };
  return table;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : cases()) out.push_back(name);
  return out;
}

GradCheckEntry run_gradcheck_case(const std::string& name, std::uint64_t seed) {
  for (const auto& [n, build] : cases()) {
    if (n != name) continue;
    const auto c = build(seed);
    return GradCheckEntry{name, seed, finite_diff_check(c.fn, c.inputs, kGradCheckStep)};
  }
  throw std::invalid_argument("unknown gradient check case '" + name + "'");
}

std::vector<GradCheckEntry> run_gradcheck_suite(std::size_t n_seeds, std::uint64_t base_seed) {
  std::vector<GradCheckEntry> out;
  for (const auto& [name, _] : cases())
    for (std::size_t k = 0; k < n_seeds; ++k) out.push_back(run_gradcheck_case(name, base_seed + k));
  return out;
}

}  // namespace eclab
