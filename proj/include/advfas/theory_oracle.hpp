#pragma once

// Grid and sampling certification of the separability guarantees of the
// expected score: with optimal (or delta-close) correctors, correctly and
// wrongly detected inputs land on opposite sides of 1/2.

#include <cstdint>
#include <optional>
#include <vector>

#include "advfas/coupled_core.hpp"

namespace advfas::theory {

// Point-wise delta-error tolerance: |g - g*| <= delta / 2.
class DeltaErrorSpec {
 public:
  // Throws DomainError unless 0 <= delta < 1.
  explicit DeltaErrorSpec(double delta);

  double delta() const noexcept { return delta_; }
  // Lower bound on f above which delta-error correctors separate: 1/(2-delta).
  double corrector_threshold() const noexcept { return 1.0 / (2.0 - delta_); }

 private:
  double delta_;
};

struct ScoreScenario {
  double f = 0.0;
  bool correct = false;
  double g_star = 0.0;
  double g = 0.0;
};

struct ViolationReport {
  std::uint64_t total_checked = 0;
  std::uint64_t violations = 0;
  std::optional<ScoreScenario> first_violation;

  bool passed() const noexcept { return violations == 0; }
  void record(const ScoreScenario& s, bool ok);
  // Deterministic merge: counts add; the earlier report's first violation wins.
  void merge(const ViolationReport& later);
};

// clamp(E_label / f, 0, 1). Throws DomainError for (One, f == 0), whose
// unconstrained optimum is unreachable.
double optimal_corrector(const ELabel& e, double f);

// |g - g_star| <= delta/2. Unlike DeltaErrorSpec this accepts delta == 1,
// which is the random-guess regime.
bool check_delta_error(double g, double g_star, double delta);
bool check_delta_error(double g, double g_star, const DeltaErrorSpec& spec);

// Every f >= 1/2 on the grid: correct (TP, g = g* = 1) must give ES >= 1/2,
// wrong (FP, g = g* = 0) must give ES < 1/2.
ViolationReport verify_lemma1(double f_grid_step);

// Every grid f in (1/(2-delta), 1] and every grid g within delta/2 of g*:
// ES(correct) > 1/2 > ES(wrong).
ViolationReport verify_theorem1(const DeltaErrorSpec& spec, double f_grid_step, double g_grid_step);

// Below 1/2 the wrong-case claim ES = 1 is infeasible at fixed f (ES <= f),
// so this certifies its gradient form: for random FN scenarios the
// derivative of BCE(f*g, 1) in f and in g is strictly negative (checked
// analytically through the autodiff graph and by central differences),
// and correct TN scenarios with g = g* = 1 have ES = f < 1/2.
ViolationReport verify_lemma2_gradient_form(std::uint64_t samples, std::uint64_t seed);

struct TheoryCertificate {
  double f_grid_step = 1e-3;
  double g_grid_step = 1e-3;
  ViolationReport lemma1;
  std::vector<double> deltas;
  std::vector<ViolationReport> theorem1;
  ViolationReport lemma2;

  bool passed() const;
};

TheoryCertificate certify(const std::vector<double>& deltas, double f_grid_step, double g_grid_step,
                          std::uint64_t lemma2_samples = 10000, std::uint64_t seed = 0);

}  // namespace advfas::theory
