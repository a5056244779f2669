#pragma once

// Synthetic real/spoof texture data, the AFDS binary dataset format, and
// assembly of mixed clean/adversarial training batches.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advfas/attacks.hpp"
#include "advfas/coupled_core.hpp"
#include "advfas/model.hpp"

namespace advfas {

enum class Origin : std::uint8_t { kCleanReal = 0, kCleanSpoof = 1, kAdversarial = 2 };

std::string_view to_string(Origin o);

struct Example {
  std::vector<double> x;
  Label label = Label::kSpoof;
  Origin origin = Origin::kCleanSpoof;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::size_t dim = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::size_t count(Label l) const;
  // Checks lengths, value range, and label/origin consistency.
  void validate() const;
  // Rows of the selected examples as a [n x dim] tensor.
  ad::Tensor features(std::span<const std::size_t> indices) const;
  ad::Tensor features() const;
};

// Real patches are built from low spatial frequencies, spoof patches from
// high ones; each component has a random phase per example, plus Gaussian
// pixel noise, clipped to [0, 1]. On top sits a global brightness offset of
// +-brightness_offset whose sign matches the class (+ for real) with a
// per-class probability. Counts are per class.
struct SyntheticConfig {
  std::size_t dim = 64;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  double noise_sigma = 0.03;
  double amplitude = 0.02;  // per sinusoid component
  double brightness_offset = 0.2;
  double brightness_agreement_real = 0.86;
  double brightness_agreement_spoof = 0.86;
  std::vector<int> real_freqs{1, 2};
  std::vector<int> spoof_freqs{3, 4};
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSplits {
  Dataset train, val, test;
  std::uint64_t train_seed = 0, val_seed = 0, test_seed = 0;
};

SyntheticSplits generate_synthetic(const SyntheticConfig& cfg);

// AFDS: "AFDS" | u32 version | u32 count | u32 dim | count*dim float32 |
// count label bytes | count origin bytes. Little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string serialize_dataset(const Dataset& ds);
// `expected_dim` = 0 accepts any dimension.
Dataset parse_dataset(std::string_view bytes, std::size_t expected_dim = 0);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, std::size_t expected_dim = 0);

// Plain-text per-split manifest.
struct SplitManifest {
  std::string split;
  std::size_t count = 0;
  std::size_t n_real = 0;
  std::size_t n_spoof = 0;
  std::size_t dim = 0;
  std::uint64_t sub_seed = 0;
  std::string config_digest;
  std::string artifact_version;
};

std::string format_manifest(const SplitManifest& m);
SplitManifest parse_manifest(const std::string& text);

struct TrainBatch {
  std::vector<Example> examples;
  std::vector<std::uint8_t> masks;  // 0 exactly on adversarial examples
  std::size_t skipped = 0;          // spoof examples whose attack failed
};

// For every clean spoof example an adversarial copy is crafted against the
// current model (detector loss, white box) and appended; the union is then
// shuffled with `seed`. stream_ids[i] keys the attack randomness of clean[i].
TrainBatch assemble_batch(std::span<const Example> clean, std::span<const std::uint64_t> stream_ids,
                          const TwoHeadModel& model, const AttackConfig& attack, std::uint64_t seed);

}  // namespace advfas
