#include "eclab/io/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace eclab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_tensor(std::string& out, const std::string& name, const Shape& shape, std::span<const float> values) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename U>
  U take() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw IoError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

RawTensor take_tensor(Cursor& c) {
  RawTensor t;
  const auto name_len = c.take<std::uint32_t>();
  t.name = c.take_bytes(name_len);
  const auto rank = c.take<std::uint32_t>();
  if (rank == 0 || rank > 8) throw IoError("checkpoint tensor '" + t.name + "' has invalid rank");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = c.take<std::uint64_t>();
    if (d == 0 || d > (std::size_t{1} << 32)) throw IoError("checkpoint tensor '" + t.name + "' has invalid shape");
    t.shape.push_back(d);
    n *= d;
  }
  const auto raw = c.take_bytes(n * sizeof(float));
  t.values.resize(n);
  std::memcpy(t.values.data(), raw.data(), raw.size());
  return t;
}

Json optional_row(const std::optional<MetricsRow>& r) { return r ? metrics_to_json(*r) : Json(nullptr); }

std::optional<MetricsRow> optional_row(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return metrics_from_json(j);
}

}  // namespace

Json metrics_to_json(const MetricsRow& r) {
  return Json{{"step", r.step},           {"lr", r.lr},
              {"loss_total", r.loss_total}, {"loss_proj", r.loss_proj},
              {"loss_cls", r.loss_cls},   {"eval_top1_seen", r.eval_top1_seen},
              {"eval_top1_holdout", r.eval_top1_holdout}, {"eval_cosine", r.eval_cosine}};
}

MetricsRow metrics_from_json(const Json& j) {
  MetricsRow r;
  r.step = j.at("step").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_proj = j.at("loss_proj").get<double>();
  r.loss_cls = j.at("loss_cls").get<double>();
  r.eval_top1_seen = j.at("eval_top1_seen").get<double>();
  r.eval_top1_holdout = j.at("eval_top1_holdout").get<double>();
  r.eval_cosine = j.at("eval_cosine").get<double>();
  return r;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto& params = ckpt.net.params();
  if (ckpt.state.adam.m.size() != params.size() || ckpt.state.adam.v.size() != params.size()) {
    throw IoError("checkpoint: optimizer state does not match the parameter list");
  }
  Json meta;
  meta["config"] = to_json(ckpt.config);
  meta["step"] = ckpt.state.step;
  meta["adam_step"] = ckpt.state.adam.step;
  meta["rng"] = ckpt.state.rng.serialize();
  meta["last_metrics"] = optional_row(ckpt.state.last);
  meta["best_metrics"] = optional_row(ckpt.state.best);
  const std::string blob = meta.dump();

  std::string out = "ECLP";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, blob.size());
  out += blob;
  for (const auto& p : params) put_tensor(out, p.name, p.value.shape(), p.value.data());
  for (std::size_t i = 0; i < params.size(); ++i)
    put_tensor(out, "adam.m." + params[i].name, params[i].value.shape(), ckpt.state.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i)
    put_tensor(out, "adam.v." + params[i].name, params[i].value.shape(), ckpt.state.adam.v[i]);
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 8 || bytes.compare(0, 4, "ECLP") != 0) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(std::string_view(bytes.data(), body))) {
    throw ChecksumError("checkpoint checksum mismatch (file corrupted)");
  }
  Cursor c(bytes, body);
  c.take_bytes(4);
  const auto version = c.take<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto blob_len = c.take<std::uint64_t>();
  Json meta;
  try {
    meta = Json::parse(c.take_bytes(blob_len));
  } catch (const Json::parse_error& e) {
    throw IoError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  auto config = experiment_from_json(meta.at("config"));

  const auto layout = parameter_layout(config.prior);
  std::vector<NamedTensor<float>> params;
  AdamState adam;
  for (int section = 0; section < 3; ++section) {
    const char* prefix = section == 0 ? "" : section == 1 ? "adam.m." : "adam.v.";
    for (const auto& spec : layout) {
      auto t = take_tensor(c);
      if (t.name != prefix + spec.name || t.shape != spec.shape) {
        throw IoError("checkpoint tensor '" + t.name + "' " + shape_string(t.shape) + " does not match expected '" +
                      prefix + spec.name + "' " + shape_string(spec.shape));
      }
      if (section == 0) params.push_back({spec.name, Tensor<float>(t.shape, std::move(t.values))});
      else if (section == 1) adam.m.push_back(std::move(t.values));
      else adam.v.push_back(std::move(t.values));
    }
  }
  if (!c.done()) throw IoError("checkpoint has trailing data before the checksum");

  TrainState state;
  state.step = meta.at("step").get<std::size_t>();
  adam.step = meta.at("adam_step").get<std::size_t>();
  state.adam = std::move(adam);
  state.rng = Rng::deserialize(meta.at("rng").get<std::string>());
  state.last = optional_row(meta.at("last_metrics"));
  state.best = optional_row(meta.at("best_metrics"));
  auto net = PriorNetwork<float>::from_params(config.prior, std::move(params));
  return Checkpoint{std::move(config), std::move(net), std::move(state)};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_text_file(path)); }

}  // namespace eclab
