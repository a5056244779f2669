#pragma once

// White-box inner maximization: L-inf PGD (FGSM is the one-step,
// no-random-start case), patch attacks, and the four adaptive objectives
// that target detector and corrector together. All attacks craft
// spoof -> real perturbations only.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advfas/coupled_core.hpp"
#include "advfas/model.hpp"

namespace advfas {

struct PgdConfig {
  double eps = 16.0 / 255.0;
  int steps = 40;
  double step_size = 0.0;  // 0 selects eps / 10
  bool random_start = true;
  std::uint64_t seed = 0;

  double effective_step() const { return step_size > 0.0 ? step_size : eps / 10.0; }
  void validate() const;
};

// Rectangle on the sqrt(d) x sqrt(d) pixel grid.
struct PatchRegion {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 2;
  std::size_t width = 2;
};

struct PatchConfig {
  PatchRegion region;
  double eps = 1.0;  // per-pixel budget inside the region; 1.0 allows the full [0,1] range
  int steps = 40;
  double step_size = 0.1;
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate(std::size_t input_dim) const;
  // Flat pixel indices covered by the region.
  std::vector<std::size_t> pixels(std::size_t input_dim) const;
};

// Per-example objective maximized by the attacker, as a weighted sum of
//   spoof: BCE(f, 0) (detector loss against the true spoof label)
//   det:   f
//   cor:   g
//   ens:   f * g
struct AttackObjective {
  double spoof = 1.0;
  double det = 0.0;
  double cor = 0.0;
  double ens = 0.0;

  static AttackObjective detector_loss() { return {}; }
};

enum class AdaptiveObjective : std::uint8_t { kSpoofPlusEns, kSpoofPlusCor, kDetPlusEns, kDetPlusCor };

std::string_view to_string(AdaptiveObjective o);
AdaptiveObjective adaptive_objective_from_string(std::string_view s);
inline constexpr AdaptiveObjective kAllAdaptiveObjectives[] = {
    AdaptiveObjective::kSpoofPlusEns, AdaptiveObjective::kSpoofPlusCor, AdaptiveObjective::kDetPlusEns,
    AdaptiveObjective::kDetPlusCor};

struct AdaptiveConfig {
  AdaptiveObjective objective = AdaptiveObjective::kSpoofPlusEns;
  double eta = 1.0;
  PgdConfig pgd;

  AttackObjective to_objective() const;
};

enum class DecisionMode : std::uint8_t { kES, kFOnly };

std::string_view to_string(DecisionMode m);
DecisionMode decision_mode_from_string(std::string_view s);

// Final accept/reject rule: ES (or f alone) against a threshold.
struct DecisionRule {
  DecisionMode mode = DecisionMode::kES;
  double threshold = 0.5;

  double score(const CoupledScores& s) const { return mode == DecisionMode::kES ? s.es : s.f; }
  Label decide(const CoupledScores& s) const { return advfas::decide(score(s), threshold); }
};

struct AttackResult {
  std::vector<double> x_adv;
  bool success = false;  // final decision accepts the spoof as real
  int steps_used = 0;
  std::vector<double> objective_trace;  // objective at each iterate, steps_used + 1 entries
  bool finite = true;                   // false if a non-finite gradient stopped the attack
};

// Per-example objective values for a batch, [B x 1], differentiable.
ad::Var attack_objective(const TwoHeadModel& model, const HeadOutputs& out, const AttackObjective& obj);

// Input gradient of the summed objective; rows are independent.
ad::Tensor objective_input_grad(const TwoHeadModel& model, const ad::Tensor& x, const AttackObjective& obj);

// Batched PGD. Row r draws its random start from (cfg.seed, stream_ids[r]),
// so results do not depend on batch composition. Rows whose gradient turns
// non-finite are frozen and reported with finite = false.
std::vector<AttackResult> pgd_attack_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                           std::span<const Label> labels, const PgdConfig& cfg,
                                           const AttackObjective& objective, const DecisionRule& rule,
                                           std::span<const std::uint64_t> stream_ids);

std::vector<AttackResult> patch_attack_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                             std::span<const Label> labels, const PatchConfig& cfg,
                                             const AttackObjective& objective, const DecisionRule& rule,
                                             std::span<const std::uint64_t> stream_ids);

// Single-example forms. Throw DomainError for label = real and
// NumericError on a non-finite gradient.
AttackResult pgd_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                        const PgdConfig& cfg, const AttackObjective& objective = {},
                        const DecisionRule& rule = {});
AttackResult patch_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                          const PatchConfig& cfg, const AttackObjective& objective = {},
                          const DecisionRule& rule = {});
AttackResult adaptive_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                             const AdaptiveConfig& cfg, const DecisionRule& rule = {});

using AttackConfig = std::variant<PgdConfig, PatchConfig>;

// Dispatches to the PGD or patch solver.
std::vector<AttackResult> craft_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                      std::span<const Label> labels, const AttackConfig& cfg,
                                      const AttackObjective& objective, const DecisionRule& rule,
                                      std::span<const std::uint64_t> stream_ids);
AttackConfig with_seed(AttackConfig cfg, std::uint64_t seed);
// Per-pixel L-inf budget of either attack kind.
double budget_of(const AttackConfig& cfg);

// ||x_adv - x||_inf <= eps + tol and x_adv in [0,1]^d.
bool within_budget(std::span<const double> x, std::span<const double> x_adv, double eps, double tol = 1e-9);

// Fraction of decisions that accept (label real). Throws DomainError on empty input.
double success_rate(std::span<const Label> decisions);

}  // namespace advfas
