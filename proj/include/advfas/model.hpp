#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advfas/autodiff.hpp"
#include "advfas/coupled_core.hpp"

namespace advfas {

enum class Activation : std::uint8_t { kRelu, kTanh };

struct BackboneConfig {
  std::size_t input_dim = 64;  // flattened 8x8 patch
  std::vector<std::size_t> trunk_widths{64, 32};
  std::size_t head_width = 16;
  Activation activation = Activation::kRelu;
  // Fixed standardization (x - input_mean) / input_std ahead of the trunk.
  double input_mean = 0.5;
  double input_std = 0.1;
  std::uint64_t seed = 0;
  // Detector head emits one score per input pixel; f is their mean.
  bool score_map = false;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

enum class ParamGroup : std::uint8_t { kTrunk, kDetector, kCorrector };

// Parameter tensors bound into one reverse-mode graph.
struct ParamVars {
  std::vector<ad::Var> vars;
  std::vector<ParamGroup> groups;
};

struct HeadOutputs {
  ad::Var f;      // [B x 1]
  ad::Var g;      // [B x 1]
  ad::Var f_map;  // [B x input_dim], only in score-map mode
};

struct ModelGrads {
  std::vector<ad::Tensor> tensors;  // one per parameter tensor, canonical order
  std::vector<ParamGroup> groups;

  // Largest |gradient| entry within one group.
  double max_abs(ParamGroup group) const;
  // True iff every entry in the group is exactly zero.
  bool all_zero(ParamGroup group) const;
};

// Shared trunk feeding a detector head (f) and a corrector head (g), each a
// hidden layer followed by a logistic output.
//
// Parameter values are kept float-representable (initialization and every
// optimizer step round through float) and evaluated in double. Checkpoints
// store float32, so save/load is exact.
class TwoHeadModel {
 public:
  TwoHeadModel() = default;
  explicit TwoHeadModel(BackboneConfig config);  // zero-filled parameters

  const BackboneConfig& config() const noexcept { return config_; }

  std::vector<ad::Tensor>& params() noexcept { return params_; }
  const std::vector<ad::Tensor>& params() const noexcept { return params_; }
  const std::vector<ParamGroup>& groups() const noexcept { return groups_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t parameter_count() const;

  ParamVars bind(bool requires_grad) const;
  HeadOutputs forward(const ParamVars& params, const ad::Var& x) const;

  // Non-differentiable conveniences.
  CoupledScores forward(std::span<const double> x) const;
  std::vector<CoupledScores> forward_batch(const ad::Tensor& x) const;

  // Rounds every parameter to the nearest float.
  void round_to_float();

  bool operator==(const TwoHeadModel& o) const;

 private:
  BackboneConfig config_;
  std::vector<ad::Tensor> params_;
  std::vector<ParamGroup> groups_;
  std::vector<std::string> names_;
};

TwoHeadModel init_model(const BackboneConfig& config);

// Backpropagates `loss` and collects parameter gradients. Throws GraphError
// if the loss does not depend on any bound parameter.
ModelGrads grads(const ParamVars& params, const ad::Var& loss);

// Backpropagates `loss` and returns d(loss)/d(x) for the leaf `x`. Throws
// GraphError if `x` is not a grad-carrying leaf reachable from `loss`.
ad::Tensor input_grad(const ad::Var& loss, const ad::Var& x);

// Checkpoint format: "AFAS" | u32 version | u32 n + n bytes of JSON config |
// per tensor: u32 rank, u32 dims..., float32 values (row-major). All
// integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const TwoHeadModel& model, const std::string& provenance_json = "");
TwoHeadModel parse_checkpoint(std::string_view bytes, std::string* provenance_json = nullptr);
void save_checkpoint(const TwoHeadModel& model, const std::filesystem::path& path,
                     const std::string& provenance_json = "");
TwoHeadModel load_checkpoint(const std::filesystem::path& path, std::string* provenance_json = nullptr);

std::string backbone_to_json(const BackboneConfig& config);
BackboneConfig backbone_from_json(const std::string& text);

}  // namespace advfas
