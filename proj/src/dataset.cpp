#include "advfas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <sstream>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"
#include "binary_io.hpp"

namespace advfas {

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kCleanReal: return "clean_real";
    case Origin::kCleanSpoof: return "clean_spoof";
    case Origin::kAdversarial: return "adversarial";
  }
  return "?";
}

std::size_t Dataset::count(Label l) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [l](const Example& e) { return e.label == l; }));
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    const auto where = "example " + std::to_string(i);
    if (e.x.size() != dim) throw ShapeError(where + ": length " + std::to_string(e.x.size()));
    for (double v : e.x) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError(where + ": feature outside [0,1]");
    }
    if (e.origin == Origin::kCleanReal && e.label != Label::kReal) {
      throw DomainError(where + ": clean_real must carry label 1");
    }
    if (e.origin != Origin::kCleanReal && e.label != Label::kSpoof) {
      throw DomainError(where + ": spoof and adversarial examples carry label 0");
    }
  }
}

ad::Tensor Dataset::features(std::span<const std::size_t> indices) const {
  ad::Tensor t(indices.size(), dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& x = examples.at(indices[r]).x;
    std::copy(x.begin(), x.end(), t.row_span(r).begin());
  }
  return t;
}

ad::Tensor Dataset::features() const {
  ad::Tensor t(examples.size(), dim);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    std::copy(examples[r].x.begin(), examples[r].x.end(), t.row_span(r).begin());
  }
  return t;
}

void SyntheticConfig::validate() const {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (dim == 0 || side * side != dim) {
    throw ConfigError("dim", "must be a positive perfect square (patch side^2), got " + std::to_string(dim));
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "must be non-negative");
  if (!(amplitude >= 0.0)) throw ConfigError("amplitude", "must be non-negative");
  if (!(brightness_offset >= 0.0)) throw ConfigError("brightness_offset", "must be non-negative");
  if (!(brightness_agreement_real >= 0.0 && brightness_agreement_real <= 1.0)) {
    throw ConfigError("brightness_agreement_real", "must lie in [0,1]");
  }
  if (!(brightness_agreement_spoof >= 0.0 && brightness_agreement_spoof <= 1.0)) {
    throw ConfigError("brightness_agreement_spoof", "must lie in [0,1]");
  }
  if (real_freqs.empty()) throw ConfigError("real_freqs", "must not be empty");
  if (spoof_freqs.empty()) throw ConfigError("spoof_freqs", "must not be empty");
}

namespace {

Example texture(const SyntheticConfig& cfg, std::size_t side, Label label, Rng& rng) {
  const auto& freqs = label == Label::kReal ? cfg.real_freqs : cfg.spoof_freqs;
  std::vector<double> phase_row(freqs.size()), phase_col(freqs.size());
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    phase_row[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    phase_col[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double agreement =
      label == Label::kReal ? cfg.brightness_agreement_real : cfg.brightness_agreement_spoof;
  const bool agrees = rng.uniform() < agreement;
  const double offset = (label == Label::kReal) == agrees ? cfg.brightness_offset : -cfg.brightness_offset;
  Example e;
  e.label = label;
  e.origin = label == Label::kReal ? Origin::kCleanReal : Origin::kCleanSpoof;
  e.x.resize(cfg.dim);
  const double w = 2.0 * std::numbers::pi / static_cast<double>(side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double v = 0.5 + offset;
      for (std::size_t k = 0; k < freqs.size(); ++k) {
        v += cfg.amplitude * (std::sin(w * freqs[k] * static_cast<double>(c) + phase_col[k]) +
                              std::sin(w * freqs[k] * static_cast<double>(r) + phase_row[k]));
      }
      v += cfg.noise_sigma * rng.normal();
      // Stored as float32 on disk; keep the in-memory value identical.
      e.x[r * side + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return e;
}

Dataset make_split(const SyntheticConfig& cfg, std::size_t per_class, std::uint64_t seed) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cfg.dim))));
  Rng rng(seed);
  Dataset ds;
  ds.dim = cfg.dim;
  ds.examples.reserve(2 * per_class);
  // Alternate classes so any prefix stays balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    ds.examples.push_back(texture(cfg, side, Label::kReal, rng));
    ds.examples.push_back(texture(cfg, side, Label::kSpoof, rng));
  }
  return ds;
}

}  // namespace

SyntheticSplits generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticSplits s;
  s.train_seed = mix_seed(cfg.seed, 1);
  s.val_seed = mix_seed(cfg.seed, 2);
  s.test_seed = mix_seed(cfg.seed, 3);
  s.train = make_split(cfg, cfg.n_train, s.train_seed);
  s.val = make_split(cfg, cfg.n_val, s.val_seed);
  s.test = make_split(cfg, cfg.n_test, s.test_seed);
  return s;
}

std::string serialize_dataset(const Dataset& ds) {
  detail::ByteWriter w;
  w.bytes("AFDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.dim));
  for (const auto& e : ds.examples) {
    if (e.x.size() != ds.dim) throw ShapeError("serialize_dataset: example length != dim");
    for (double v : e.x) w.f32(static_cast<float>(v));
  }
  for (const auto& e : ds.examples) w.u8(static_cast<std::uint8_t>(e.label));
  for (const auto& e : ds.examples) w.u8(static_cast<std::uint8_t>(e.origin));
  return std::move(w.str());
}

Dataset parse_dataset(std::string_view bytes, std::size_t expected_dim) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "AFDS") {
    throw LoadError(LoadError::Kind::kBadMagic, "bad magic");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw LoadError(LoadError::Kind::kUnsupportedVersion, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  if (expected_dim != 0 && dim != expected_dim) {
    throw LoadError(LoadError::Kind::kShapeMismatch, "dim mismatch at offset 12: file has " +
                                                         std::to_string(dim) + ", expected " +
                                                         std::to_string(expected_dim));
  }
  Dataset ds;
  ds.dim = dim;
  ds.examples.resize(count);
  for (auto& e : ds.examples) {
    e.x.resize(dim);
    for (double& v : e.x) v = r.f32("features");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t l = r.u8("labels");
    if (l > 1) throw LoadError(LoadError::Kind::kMalformed, "bad label byte at offset " + std::to_string(at));
    ds.examples[i].label = static_cast<Label>(l);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t o = r.u8("origins");
    if (o > 2) throw LoadError(LoadError::Kind::kMalformed, "bad origin byte at offset " + std::to_string(at));
    ds.examples[i].origin = static_cast<Origin>(o);
  }
  if (r.remaining() != 0) {
    throw LoadError(LoadError::Kind::kMalformed, "trailing bytes at offset " + std::to_string(r.offset()));
  }
  try {
    ds.validate();
  } catch (const std::exception& e) {
    throw LoadError(LoadError::Kind::kMalformed, e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t expected_dim) {
  return parse_dataset(detail::read_file(path), expected_dim);
}

std::string format_manifest(const SplitManifest& m) {
  std::ostringstream os;
  os << "format: AFDS v" << kDatasetVersion << '\n'
     << "split: " << m.split << '\n'
     << "count: " << m.count << '\n'
     << "n_real: " << m.n_real << '\n'
     << "n_spoof: " << m.n_spoof << '\n'
     << "dim: " << m.dim << '\n'
     << "sub_seed: " << m.sub_seed << '\n'
     << "config_digest: " << m.config_digest << '\n'
     << "artifact_version: " << m.artifact_version << '\n';
  return os.str();
}

SplitManifest parse_manifest(const std::string& text) {
  SplitManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    const auto key = line.substr(0, colon);
    const auto value = line.substr(colon + 2);
    if (key == "split") m.split = value;
    else if (key == "count") m.count = std::stoull(value);
    else if (key == "n_real") m.n_real = std::stoull(value);
    else if (key == "n_spoof") m.n_spoof = std::stoull(value);
    else if (key == "dim") m.dim = std::stoull(value);
    else if (key == "sub_seed") m.sub_seed = std::stoull(value);
    else if (key == "config_digest") m.config_digest = value;
    else if (key == "artifact_version") m.artifact_version = value;
  }
  return m;
}

TrainBatch assemble_batch(std::span<const Example> clean, std::span<const std::uint64_t> stream_ids,
                          const TwoHeadModel& model, const AttackConfig& attack, std::uint64_t seed) {
  if (stream_ids.size() != clean.size()) throw ShapeError("assemble_batch: stream id count mismatch");
  std::vector<std::size_t> spoof_idx;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean[i].origin == Origin::kAdversarial) {
      throw DomainError("assemble_batch expects clean examples only");
    }
    if (clean[i].origin == Origin::kCleanSpoof) spoof_idx.push_back(i);
  }

  TrainBatch batch;
  batch.examples.assign(clean.begin(), clean.end());
  if (!spoof_idx.empty()) {
    ad::Tensor x(spoof_idx.size(), model.config().input_dim);
    std::vector<std::uint64_t> streams(spoof_idx.size());
    for (std::size_t k = 0; k < spoof_idx.size(); ++k) {
      const auto& src = clean[spoof_idx[k]].x;
      std::copy(src.begin(), src.end(), x.row_span(k).begin());
      streams[k] = stream_ids[spoof_idx[k]];
    }
    const std::vector<Label> labels(spoof_idx.size(), Label::kSpoof);
    const auto results = craft_batch(model, x, labels, attack, AttackObjective::detector_loss(), {}, streams);
    for (std::size_t k = 0; k < results.size(); ++k) {
      if (!results[k].finite) {
        std::cerr << "warning: attack on example stream " << streams[k]
                  << " hit a non-finite gradient; skipped\n";
        ++batch.skipped;
        continue;
      }
      batch.examples.push_back({results[k].x_adv, Label::kSpoof, Origin::kAdversarial});
    }
  }
  Rng rng(seed);
  rng.shuffle(batch.examples.begin(), batch.examples.end());
  batch.masks.resize(batch.examples.size());
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    batch.masks[i] = batch.examples[i].origin == Origin::kAdversarial ? 0 : 1;
  }
  return batch;
}

}  // namespace advfas
