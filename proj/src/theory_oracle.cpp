#include "advfas/theory_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"

namespace advfas::theory {

namespace {

void check_grid_step(double step, const char* name) {
  if (!(step > 0.0 && step <= 1e-2)) {
    throw DomainError(std::string(name) + " must be in (0, 1e-2], got " + std::to_string(step));
  }
}

// Grid points i*step in [0,1], with 1 itself always included.
std::vector<double> unit_grid(double step) {
  std::vector<double> pts;
  const auto n = static_cast<std::int64_t>(std::floor(1.0 / step + 1e-9));
  pts.reserve(static_cast<std::size_t>(n) + 2);
  for (std::int64_t i = 0; i <= n; ++i) pts.push_back(std::min(1.0, static_cast<double>(i) * step));
  if (pts.back() < 1.0) pts.push_back(1.0);
  return pts;
}

}  // namespace

DeltaErrorSpec::DeltaErrorSpec(double delta) : delta_(delta) {
  if (!(delta >= 0.0 && delta < 1.0)) {
    throw DomainError("delta must be in [0, 1), got " + std::to_string(delta));
  }
}

void ViolationReport::record(const ScoreScenario& s, bool ok) {
  ++total_checked;
  if (ok) return;
  if (violations++ == 0) first_violation = s;
}

void ViolationReport::merge(const ViolationReport& later) {
  total_checked += later.total_checked;
  if (!first_violation && later.first_violation) first_violation = later.first_violation;
  violations += later.violations;
}

double optimal_corrector(const ELabel& e, double f) {
  if (!(f >= 0.0 && f <= 1.0)) throw DomainError("f outside [0,1]");
  switch (e.kind) {
    case ELabel::Kind::kZero:
      return 0.0;
    case ELabel::Kind::kPassThroughDetached:
      // f/f; the f -> 0 limit is also 1.
      return 1.0;
    case ELabel::Kind::kOne:
      if (f == 0.0) throw DomainError("unreachable optimum: E_label = 1 with f = 0");
      return std::min(1.0, 1.0 / f);
  }
  return 0.0;
}

bool check_delta_error(double g, double g_star, double delta) {
  return std::abs(g - g_star) <= delta / 2.0;
}

bool check_delta_error(double g, double g_star, const DeltaErrorSpec& spec) {
  return check_delta_error(g, g_star, spec.delta());
}

ViolationReport verify_lemma1(double f_grid_step) {
  check_grid_step(f_grid_step, "f_grid_step");
  ViolationReport report;
  for (double f : unit_grid(f_grid_step)) {
    if (f < 0.5) continue;
    // Correct detection above 1/2 is TP; wrong is FP.
    const auto tp = classify_case(Label::kReal, f);
    const auto fp = classify_case(Label::kSpoof, f);
    const double g_correct = optimal_corrector(e_label(tp, f), f);
    const double g_wrong = optimal_corrector(e_label(fp, f), f);
    const double es_correct = expected_score(f, g_correct);
    const double es_wrong = expected_score(f, g_wrong);
    report.record({f, true, g_correct, g_correct}, tp == DetectionCase::kTP && es_correct >= 0.5);
    report.record({f, false, g_wrong, g_wrong}, fp == DetectionCase::kFP && es_wrong < 0.5);
  }
  return report;
}

ViolationReport verify_theorem1(const DeltaErrorSpec& spec, double f_grid_step, double g_grid_step) {
  check_grid_step(f_grid_step, "f_grid_step");
  check_grid_step(g_grid_step, "g_grid_step");
  const double tau = spec.corrector_threshold();
  const std::vector<double> g_grid = unit_grid(g_grid_step);

  ViolationReport report;
  for (double f : unit_grid(f_grid_step)) {
    if (!(f > tau)) continue;
    const double g_star_correct = optimal_corrector(e_label(classify_case(Label::kReal, f), f), f);
    const double g_star_wrong = optimal_corrector(e_label(classify_case(Label::kSpoof, f), f), f);
    for (double g : g_grid) {
      if (check_delta_error(g, g_star_correct, spec)) {
        report.record({f, true, g_star_correct, g}, expected_score(f, g) > 0.5);
      }
      if (check_delta_error(g, g_star_wrong, spec)) {
        report.record({f, false, g_star_wrong, g}, expected_score(f, g) < 0.5);
      }
    }
  }
  return report;
}

ViolationReport verify_lemma2_gradient_form(std::uint64_t samples, std::uint64_t seed) {
  if (samples < 1000) throw DomainError("lemma 2 check needs at least 1000 samples");
  constexpr double kStep = 1e-6;
  Rng rng(mix_seed(seed, 0x1e3a2));
  ViolationReport report;
  for (std::uint64_t i = 0; i < samples; ++i) {
    // Keep f*g well above the BCE clamp so the derivative is not flattened.
    const double f = rng.uniform(0.01, 0.49);
    const double g = rng.uniform(0.01, 1.0);

    const auto fn = classify_case(Label::kReal, f);
    const double target = e_label(fn, f).value;
    auto fv = ad::Var::leaf(ad::Tensor::scalar(f), true);
    auto gv = ad::Var::leaf(ad::Tensor::scalar(g), true);
    auto loss = graph::bce(ad::mul(fv, gv), ad::Var::constant(target));
    loss.backward();
    const double df = fv.grad()[0];
    const double dg = gv.grad()[0];
    const double df_fd = (bce((f + kStep) * g, target) - bce((f - kStep) * g, target)) / (2 * kStep);
    const double dg_fd = (bce(f * (g + kStep), target) - bce(f * (g - kStep), target)) / (2 * kStep);
    const bool descent_ok = fn == DetectionCase::kFN && f * g < 1.0 && df < 0.0 && dg < 0.0 &&
                            df_fd < 0.0 && dg_fd < 0.0;
    report.record({f, false, 1.0, g}, descent_ok);

    // Correct branch: TN with g = g* = 1 keeps ES = f below 1/2.
    const auto tn = classify_case(Label::kSpoof, f);
    const double g_star = optimal_corrector(e_label(tn, f), f);
    report.record({f, true, g_star, g_star},
                  tn == DetectionCase::kTN && expected_score(f, g_star) == f && f < 0.5);
  }
  return report;
}

bool TheoryCertificate::passed() const {
  return lemma1.passed() && lemma2.passed() &&
         std::all_of(theorem1.begin(), theorem1.end(), [](const auto& r) { return r.passed(); });
}

TheoryCertificate certify(const std::vector<double>& deltas, double f_grid_step, double g_grid_step,
                          std::uint64_t lemma2_samples, std::uint64_t seed) {
  TheoryCertificate cert;
  cert.f_grid_step = f_grid_step;
  cert.g_grid_step = g_grid_step;
  std::vector<DeltaErrorSpec> specs;
  for (double d : deltas) specs.emplace_back(d);  // validate all before any work
  cert.lemma1 = verify_lemma1(f_grid_step);
  cert.deltas = deltas;
  for (const auto& spec : specs) cert.theorem1.push_back(verify_theorem1(spec, f_grid_step, g_grid_step));
  cert.lemma2 = verify_lemma2_gradient_form(lemma2_samples, seed);
  return cert;
}

}  // namespace advfas::theory
