#pragma once

// Case taxonomy, expected score, and the coupled detector/corrector losses.
//
// Conventions used throughout the project:
//   * f is the detector's probability that the input is *real* (label 1).
//   * A detector decision is "predicted real" iff f >= 1/2.
//   * ES = f * g is the final decision statistic.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "advfas/autodiff.hpp"

namespace advfas {

enum class Label : std::uint8_t { kSpoof = 0, kReal = 1 };

constexpr int to_int(Label l) { return static_cast<int>(l); }
Label label_from_int(int v);

// Unit-interval pair (f, g) with es = f * g.
struct CoupledScores {
  double f = 0.0;
  double g = 0.0;
  double es = 0.0;

  // Validates f, g in [0,1]; throws DomainError otherwise.
  static CoupledScores make(double f, double g);
};

enum class DetectionCase : std::uint8_t { kTP, kFP, kTN, kFN };

std::string_view to_string(DetectionCase c);
constexpr bool is_wrong(DetectionCase c) { return c == DetectionCase::kFP || c == DetectionCase::kFN; }
constexpr bool is_correct(DetectionCase c) { return !is_wrong(c); }

// Corrector-loss target. For kPassThroughDetached, `value` is f, to be used
// without gradient.
struct ELabel {
  enum class Kind : std::uint8_t { kZero, kOne, kPassThroughDetached };
  Kind kind = Kind::kZero;
  double value = 0.0;

  static ELabel zero() { return {Kind::kZero, 0.0}; }
  static ELabel one() { return {Kind::kOne, 1.0}; }
  static ELabel pass_through(double f) { return {Kind::kPassThroughDetached, f}; }

  bool operator==(const ELabel&) const = default;
};

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr double kDefaultLambda = 1.0;

struct LossTerms {
  double l_spoof = 0.0;
  double l_cor = 0.0;
  double lambda = kDefaultLambda;
  double l_cs = 0.0;
};

DetectionCase classify_case(Label label, double f);
double expected_score(double f, double g);
ELabel e_label(DetectionCase c, double f);
double bce(double p, double t);
// BCE(f*g, E_label) for a single example.
double corrector_loss(const CoupledScores& scores, DetectionCase c);
double spoof_loss(double f, Label label);
double masked_spoof_loss(std::uint8_t mask, double loss);
// Sum of m_i * l_i over the unmasked count (0 when everything is masked).
double masked_mean(std::span<const std::uint8_t> masks, std::span<const double> losses);
double combined_loss(double l_spoof, double l_cor, double lambda);
LossTerms make_loss_terms(double l_spoof, double l_cor, double lambda = kDefaultLambda);
Label decide(double es, double threshold);

// Differentiable batched forms. Scores and per-example losses are [B x 1]
// columns; `f_map` is a [B x C] per-pixel score map.
namespace graph {

ad::Var bce(const ad::Var& p, const ad::Var& t);

// Per-example BCE(f, label), [B x 1].
ad::Var spoof_loss(const ad::Var& f, std::span<const Label> labels);

// Per-example mean BCE of every map entry against the constant label map.
ad::Var spoof_loss_map(const ad::Var& f_map, std::span<const Label> labels);

// Per-example corrector loss, [B x 1]. For correct cases (TP/TN) f is
// detached both inside the product f*g and as the target, so no gradient
// reaches the detector through these rows.
ad::Var corrector_loss(const ad::Var& f, const ad::Var& g, std::span<const DetectionCase> cases);

// Mean of per-example losses over examples with mask 1.
ad::Var masked_spoof_loss(const ad::Var& per_example, std::span<const std::uint8_t> masks);

ad::Var combined_loss(const ad::Var& l_spoof, const ad::Var& l_cor, double lambda);

}  // namespace graph

// Cases for a batch, from the current (numeric) detector scores.
std::vector<DetectionCase> classify_cases(std::span<const Label> labels, const ad::Tensor& f);

}  // namespace advfas
