#include "advfas/model.hpp"

#include <algorithm>
#include <cmath>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"
#include "binary_io.hpp"
#include "json.hpp"

namespace advfas {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim", "must be positive");
  if (trunk_widths.empty()) throw ConfigError("trunk_widths", "need at least one trunk layer");
  for (std::size_t w : trunk_widths) {
    if (w == 0) throw ConfigError("trunk_widths", "widths must be positive");
  }
  if (head_width == 0) throw ConfigError("head_width", "must be positive");
  if (!(input_std > 0.0)) throw ConfigError("input_std", "must be positive");
  if (!std::isfinite(input_mean)) throw ConfigError("input_mean", "must be finite");
}

double ModelGrads::max_abs(ParamGroup group) const {
  double m = 0.0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (groups[i] != group) continue;
    for (double v : tensors[i].data()) m = std::max(m, std::abs(v));
  }
  return m;
}

bool ModelGrads::all_zero(ParamGroup group) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (groups[i] != group) continue;
    for (double v : tensors[i].data()) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

TwoHeadModel::TwoHeadModel(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  auto add_layer = [this](std::size_t in, std::size_t out, ParamGroup group, const std::string& name) {
    params_.emplace_back(out, in);
    groups_.push_back(group);
    names_.push_back(name + ".weight");
    params_.emplace_back(1, out);
    groups_.push_back(group);
    names_.push_back(name + ".bias");
  };
  std::size_t width = config_.input_dim;
  for (std::size_t i = 0; i < config_.trunk_widths.size(); ++i) {
    add_layer(width, config_.trunk_widths[i], ParamGroup::kTrunk, "trunk." + std::to_string(i));
    width = config_.trunk_widths[i];
  }
  const std::size_t detector_out = config_.score_map ? config_.input_dim : 1;
  add_layer(width, config_.head_width, ParamGroup::kDetector, "detector.hidden");
  add_layer(config_.head_width, detector_out, ParamGroup::kDetector, "detector.out");
  add_layer(width, config_.head_width, ParamGroup::kCorrector, "corrector.hidden");
  add_layer(config_.head_width, 1, ParamGroup::kCorrector, "corrector.out");
}

std::size_t TwoHeadModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

ParamVars TwoHeadModel::bind(bool requires_grad) const {
  ParamVars pv;
  pv.vars.reserve(params_.size());
  for (const auto& t : params_) pv.vars.push_back(ad::Var::leaf(t, requires_grad));
  pv.groups = groups_;
  return pv;
}

HeadOutputs TwoHeadModel::forward(const ParamVars& p, const ad::Var& x) const {
  if (x.cols() != config_.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(config_.input_dim));
  }
  if (p.vars.size() != params_.size()) throw ShapeError("forward: parameter binding mismatch");
  auto act = [this](const ad::Var& v) {
    return config_.activation == Activation::kRelu ? ad::relu(v) : ad::tanh(v);
  };
  std::size_t k = 0;
  ad::Var h = ad::affine(x, 1.0 / config_.input_std, -config_.input_mean / config_.input_std);
  for (std::size_t i = 0; i < config_.trunk_widths.size(); ++i, k += 2) {
    h = act(ad::linear(h, p.vars[k], p.vars[k + 1]));
  }
  HeadOutputs out;
  const ad::Var dh = act(ad::linear(h, p.vars[k], p.vars[k + 1]));
  const ad::Var dout = ad::sigmoid(ad::linear(dh, p.vars[k + 2], p.vars[k + 3]));
  if (config_.score_map) {
    out.f_map = dout;
    out.f = ad::row_mean(dout);
  } else {
    out.f = dout;
  }
  k += 4;
  const ad::Var ch = act(ad::linear(h, p.vars[k], p.vars[k + 1]));
  out.g = ad::sigmoid(ad::linear(ch, p.vars[k + 2], p.vars[k + 3]));
  return out;
}

CoupledScores TwoHeadModel::forward(std::span<const double> x) const {
  return forward_batch(ad::Tensor::row(x)).front();
}

std::vector<CoupledScores> TwoHeadModel::forward_batch(const ad::Tensor& x) const {
  const auto out = forward(bind(false), ad::Var::constant(x));
  std::vector<CoupledScores> scores(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double f = out.f.value()[r], g = out.g.value()[r];
    scores[r] = {f, g, f * g};
  }
  return scores;
}

void TwoHeadModel::round_to_float() {
  for (auto& t : params_) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

bool TwoHeadModel::operator==(const TwoHeadModel& o) const {
  if (!(config_ == o.config_) || params_.size() != o.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].data() != o.params_[i].data()) return false;
  }
  return true;
}

TwoHeadModel init_model(const BackboneConfig& config) {
  TwoHeadModel model(config);
  Rng rng(mix_seed(config.seed, 0x5eed));
  auto& params = model.params();
  // Weight/bias pairs share the fan-in bound 1/sqrt(in).
  for (std::size_t i = 0; i < params.size(); i += 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(params[i].cols()));
    for (double& v : params[i].data()) v = rng.uniform(-bound, bound);
    for (double& v : params[i + 1].data()) v = rng.uniform(-bound, bound);
  }
  model.round_to_float();
  return model;
}

ModelGrads grads(const ParamVars& params, const ad::Var& loss) {
  const bool connected = std::any_of(params.vars.begin(), params.vars.end(),
                                     [&](const ad::Var& v) { return loss.depends_on(v); });
  if (!connected) throw GraphError("loss is not connected to the model parameters");
  loss.backward();
  ModelGrads g;
  g.tensors.reserve(params.vars.size());
  for (const auto& v : params.vars) g.tensors.push_back(v.grad());
  g.groups = params.groups;
  return g;
}

ad::Tensor input_grad(const ad::Var& loss, const ad::Var& x) {
  if (!x.requires_grad() || !loss.depends_on(x)) {
    throw GraphError("loss is not connected to the input");
  }
  loss.backward();
  return x.grad();
}

std::string backbone_to_json(const BackboneConfig& c) {
  json j;
  j["input_dim"] = c.input_dim;
  j["trunk_widths"] = c.trunk_widths;
  j["head_width"] = c.head_width;
  j["activation"] = c.activation == Activation::kRelu ? "relu" : "tanh";
  j["input_mean"] = c.input_mean;
  j["input_std"] = c.input_std;
  j["seed"] = c.seed;
  j["score_map"] = c.score_map;
  return j.dump();
}

namespace {

bool is_bias(const std::string& name) { return name.ends_with(".bias"); }

BackboneConfig backbone_from(const json& j) {
  BackboneConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.trunk_widths = j.at("trunk_widths").get<std::vector<std::size_t>>();
  c.head_width = j.at("head_width").get<std::size_t>();
  const auto act = j.at("activation").get<std::string>();
  if (act == "relu") {
    c.activation = Activation::kRelu;
  } else if (act == "tanh") {
    c.activation = Activation::kTanh;
  } else {
    throw ConfigError("activation", "unknown activation '" + act + "'");
  }
  c.input_mean = j.value("input_mean", 0.5);
  c.input_std = j.value("input_std", 0.1);
  c.seed = j.at("seed").get<std::uint64_t>();
  c.score_map = j.value("score_map", false);
  return c;
}

}  // namespace

BackboneConfig backbone_from_json(const std::string& text) {
  try {
    return backbone_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError("backbone", e.what());
  }
}

std::string serialize_checkpoint(const TwoHeadModel& model, const std::string& provenance_json) {
  json cfg = json::parse(backbone_to_json(model.config()));
  if (!provenance_json.empty()) cfg["provenance"] = json::parse(provenance_json);
  const std::string cfg_text = cfg.dump();

  detail::ByteWriter w;
  w.bytes("AFAS");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg_text.size()));
  w.bytes(cfg_text);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& t = model.params()[i];
    if (is_bias(model.names()[i])) {
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(t.cols()));
    } else {
      w.u32(2);
      w.u32(static_cast<std::uint32_t>(t.rows()));
      w.u32(static_cast<std::uint32_t>(t.cols()));
    }
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  return std::move(w.str());
}

TwoHeadModel parse_checkpoint(std::string_view bytes, std::string* provenance_json) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "AFAS") {
    throw LoadError(LoadError::Kind::kBadMagic, "bad magic");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError(LoadError::Kind::kUnsupportedVersion, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = r.u32("config length");
  const std::string_view cfg_text = r.bytes(cfg_len, "config block");
  json cfg;
  BackboneConfig config;
  try {
    cfg = json::parse(cfg_text);
    config = backbone_from(cfg);
    config.validate();
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::kMalformed, std::string("malformed config block: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::kMalformed, std::string("malformed config block: ") + e.what());
  }
  if (provenance_json) *provenance_json = cfg.contains("provenance") ? cfg["provenance"].dump() : "";

  TwoHeadModel model(config);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& t = model.params()[i];
    const std::size_t at = r.offset();
    const std::uint32_t rank = r.u32("tensor rank");
    std::size_t rows = 1, cols = 0;
    if (rank == 1) {
      cols = r.u32("tensor dim");
    } else if (rank == 2) {
      rows = r.u32("tensor dim");
      cols = r.u32("tensor dim");
    } else {
      throw LoadError(LoadError::Kind::kShapeMismatch,
                      "tensor " + model.names()[i] + ": bad rank " + std::to_string(rank));
    }
    if (rows != t.rows() || cols != t.cols() || (rank == 1) != is_bias(model.names()[i])) {
      throw LoadError(LoadError::Kind::kShapeMismatch,
                      "tensor " + model.names()[i] + " at offset " + std::to_string(at) +
                          ": shape does not match config");
    }
    for (double& v : t.data()) v = r.f32("tensor data");
  }
  if (r.remaining() != 0) {
    throw LoadError(LoadError::Kind::kMalformed,
                    "trailing bytes after last tensor at offset " + std::to_string(r.offset()));
  }
  return model;
}

void save_checkpoint(const TwoHeadModel& model, const std::filesystem::path& path,
                     const std::string& provenance_json) {
  detail::write_file(path, serialize_checkpoint(model, provenance_json));
}

TwoHeadModel load_checkpoint(const std::filesystem::path& path, std::string* provenance_json) {
  return parse_checkpoint(detail::read_file(path), provenance_json);
}

}  // namespace advfas
