#include "advfas/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"

namespace advfas {

void PgdConfig::validate() const {
  if (!(eps >= 0.0)) throw ConfigError("eps", "must be non-negative");
  if (steps < 0) throw ConfigError("steps", "must be non-negative");
  if (!(step_size >= 0.0)) throw ConfigError("step_size", "must be positive (0 selects eps/10)");
}

void PatchConfig::validate(std::size_t input_dim) const {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
  if (side * side != input_dim) throw ConfigError("input_dim", "patch attacks need a square pixel grid");
  if (region.height == 0 || region.width == 0) throw ConfigError("region", "empty patch region");
  if (region.row + region.height > side || region.col + region.width > side) {
    throw ConfigError("region", "patch region exceeds the " + std::to_string(side) + "x" +
                                    std::to_string(side) + " grid");
  }
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("eps", "must be in (0, 1]");
  if (steps < 0) throw ConfigError("steps", "must be non-negative");
  if (steps > 0 && !(step_size > 0.0)) throw ConfigError("step_size", "must be positive");
}

std::vector<std::size_t> PatchConfig::pixels(std::size_t input_dim) const {
  validate(input_dim);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
  std::vector<std::size_t> idx;
  for (std::size_t r = region.row; r < region.row + region.height; ++r) {
    for (std::size_t c = region.col; c < region.col + region.width; ++c) idx.push_back(r * side + c);
  }
  return idx;
}

std::string_view to_string(AdaptiveObjective o) {
  switch (o) {
    case AdaptiveObjective::kSpoofPlusEns: return "SPOOF_PLUS_ENS";
    case AdaptiveObjective::kSpoofPlusCor: return "SPOOF_PLUS_COR";
    case AdaptiveObjective::kDetPlusEns: return "DET_PLUS_ENS";
    case AdaptiveObjective::kDetPlusCor: return "DET_PLUS_COR";
  }
  return "?";
}

AdaptiveObjective adaptive_objective_from_string(std::string_view s) {
  for (auto o : kAllAdaptiveObjectives) {
    if (to_string(o) == s) return o;
  }
  throw ConfigError("objective", "unknown adaptive objective '" + std::string(s) + "'");
}

AttackObjective AdaptiveConfig::to_objective() const {
  if (!(eta >= 0.0)) throw ConfigError("eta", "must be non-negative");
  switch (objective) {
    case AdaptiveObjective::kSpoofPlusEns: return {1.0, 0.0, 0.0, eta};
    case AdaptiveObjective::kSpoofPlusCor: return {1.0, 0.0, eta, 0.0};
    case AdaptiveObjective::kDetPlusEns: return {0.0, 1.0, 0.0, eta};
    case AdaptiveObjective::kDetPlusCor: return {0.0, 1.0, eta, 0.0};
  }
  return {};
}

std::string_view to_string(DecisionMode m) { return m == DecisionMode::kES ? "ES" : "F_ONLY"; }

DecisionMode decision_mode_from_string(std::string_view s) {
  if (s == "ES") return DecisionMode::kES;
  if (s == "F_ONLY") return DecisionMode::kFOnly;
  throw ConfigError("decision_mode", "expected ES or F_ONLY, got '" + std::string(s) + "'");
}

ad::Var attack_objective(const TwoHeadModel& model, const HeadOutputs& out, const AttackObjective& obj) {
  const std::vector<Label> spoof(out.f.rows(), Label::kSpoof);
  ad::Var total;
  auto accumulate = [&total](const ad::Var& term) { total = total.valid() ? ad::add(total, term) : term; };
  // Zero-weight terms are left out of the graph entirely, so an eta = 0
  // objective is the base objective bit for bit.
  if (obj.spoof != 0.0) {
    const ad::Var l = model.config().score_map ? graph::spoof_loss_map(out.f_map, spoof)
                                               : graph::spoof_loss(out.f, spoof);
    accumulate(obj.spoof == 1.0 ? l : ad::scale(l, obj.spoof));
  }
  if (obj.det != 0.0) accumulate(obj.det == 1.0 ? out.f : ad::scale(out.f, obj.det));
  if (obj.cor != 0.0) accumulate(obj.cor == 1.0 ? out.g : ad::scale(out.g, obj.cor));
  if (obj.ens != 0.0) {
    const ad::Var es = ad::mul(out.f, out.g);
    accumulate(obj.ens == 1.0 ? es : ad::scale(es, obj.ens));
  }
  if (!total.valid()) total = ad::Var::constant(ad::Tensor(out.f.rows(), 1));
  return total;
}

ad::Tensor objective_input_grad(const TwoHeadModel& model, const ad::Tensor& x, const AttackObjective& obj) {
  const auto params = model.bind(false);
  const auto xv = ad::Var::leaf(x, true);
  const auto loss = ad::sum(attack_objective(model, model.forward(params, xv), obj));
  if (!loss.depends_on(xv)) return ad::Tensor(x.rows(), x.cols());
  return input_grad(loss, xv);
}

namespace {

void require_spoof(std::span<const Label> labels) {
  for (Label l : labels) {
    if (l != Label::kSpoof) throw DomainError("real-to-fake not considered: attacks require label 0");
  }
}

// Iterated signed-gradient ascent over the pixels in `movable`, each kept in
// [lo, hi] (elementwise bounds of x's shape).
std::vector<AttackResult> sign_ascent(const TwoHeadModel& model, const ad::Tensor& x,
                                      std::span<const Label> labels, std::span<const std::size_t> movable,
                                      const ad::Tensor& lo, const ad::Tensor& hi, int steps, double step,
                                      bool random_start, double start_radius, std::uint64_t seed,
                                      std::span<const std::uint64_t> stream_ids,
                                      const AttackObjective& objective, const DecisionRule& rule) {
  require_spoof(labels);
  const std::size_t n = x.rows(), d = x.cols();
  if (labels.size() != n || stream_ids.size() != n) throw ShapeError("attack: batch size mismatch");
  if (d != model.config().input_dim) throw ShapeError("attack: input dimension mismatch");

  ad::Tensor xa = x;
  if (steps > 0 && random_start) {
    for (std::size_t r = 0; r < n; ++r) {
      Rng rng(mix_seed(seed, stream_ids[r]));
      for (std::size_t i : movable) {
        const double v = x(r, i) + rng.uniform(-start_radius, start_radius);
        xa(r, i) = std::clamp(v, lo(r, i), hi(r, i));
      }
    }
  }

  std::vector<AttackResult> results(n);
  std::vector<std::uint8_t> active(n, 1);
  const auto params = model.bind(false);
  for (int s = 0; s < steps; ++s) {
    const auto xv = ad::Var::leaf(xa, true);
    const auto per_row = attack_objective(model, model.forward(params, xv), objective);
    for (std::size_t r = 0; r < n; ++r) {
      if (active[r]) results[r].objective_trace.push_back(per_row.value()[r]);
    }
    const auto total = ad::sum(per_row);
    ad::Tensor grad(n, d);
    if (total.depends_on(xv)) {
      total.backward();
      grad = xv.grad();
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (!active[r]) continue;
      const auto gr = grad.row_span(r);
      if (!std::all_of(gr.begin(), gr.end(), [](double v) { return std::isfinite(v); }) ||
          !std::isfinite(per_row.value()[r])) {
        active[r] = 0;
        results[r].finite = false;
        continue;
      }
      for (std::size_t i : movable) {
        const double dir = gr[i] > 0.0 ? 1.0 : (gr[i] < 0.0 ? -1.0 : 0.0);
        xa(r, i) = std::clamp(xa(r, i) + step * dir, lo(r, i), hi(r, i));
      }
      results[r].steps_used = s + 1;
    }
  }

  const auto out = model.forward(params, ad::Var::constant(xa));
  const auto final_obj = attack_objective(model, out, objective);
  for (std::size_t r = 0; r < n; ++r) {
    const double f = out.f.value()[r], g = out.g.value()[r];
    results[r].objective_trace.push_back(final_obj.value()[r]);
    results[r].success = rule.decide({f, g, f * g}) == Label::kReal;
    const auto row = xa.row_span(r);
    results[r].x_adv.assign(row.begin(), row.end());
  }
  return results;
}

}  // namespace

std::vector<AttackResult> pgd_attack_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                           std::span<const Label> labels, const PgdConfig& cfg,
                                           const AttackObjective& objective, const DecisionRule& rule,
                                           std::span<const std::uint64_t> stream_ids) {
  cfg.validate();
  ad::Tensor lo(x.rows(), x.cols()), hi(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(0.0, x[i] - cfg.eps);
    hi[i] = std::min(1.0, x[i] + cfg.eps);
  }
  std::vector<std::size_t> all(x.cols());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return sign_ascent(model, x, labels, all, lo, hi, cfg.steps, cfg.effective_step(), cfg.random_start, cfg.eps,
                     cfg.seed, stream_ids, objective, rule);
}

std::vector<AttackResult> patch_attack_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                             std::span<const Label> labels, const PatchConfig& cfg,
                                             const AttackObjective& objective, const DecisionRule& rule,
                                             std::span<const std::uint64_t> stream_ids) {
  const auto region = cfg.pixels(x.cols());
  ad::Tensor lo = x, hi = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i : region) {
      lo(r, i) = std::max(0.0, x(r, i) - cfg.eps);
      hi(r, i) = std::min(1.0, x(r, i) + cfg.eps);
    }
  }
  return sign_ascent(model, x, labels, region, lo, hi, cfg.steps, cfg.step_size, cfg.random_start, cfg.eps,
                     cfg.seed, stream_ids, objective, rule);
}

namespace {

AttackResult single(std::vector<AttackResult> results) {
  if (!results.front().finite) throw NumericError("attack produced a non-finite gradient");
  return std::move(results.front());
}

}  // namespace

AttackResult pgd_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                        const PgdConfig& cfg, const AttackObjective& objective, const DecisionRule& rule) {
  const Label labels[] = {label};
  const std::uint64_t streams[] = {0};
  return single(pgd_attack_batch(model, ad::Tensor::row(x), labels, cfg, objective, rule, streams));
}

AttackResult patch_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                          const PatchConfig& cfg, const AttackObjective& objective, const DecisionRule& rule) {
  const Label labels[] = {label};
  const std::uint64_t streams[] = {0};
  return single(patch_attack_batch(model, ad::Tensor::row(x), labels, cfg, objective, rule, streams));
}

AttackResult adaptive_attack(const TwoHeadModel& model, std::span<const double> x, Label label,
                             const AdaptiveConfig& cfg, const DecisionRule& rule) {
  return pgd_attack(model, x, label, cfg.pgd, cfg.to_objective(), rule);
}

std::vector<AttackResult> craft_batch(const TwoHeadModel& model, const ad::Tensor& x,
                                      std::span<const Label> labels, const AttackConfig& cfg,
                                      const AttackObjective& objective, const DecisionRule& rule,
                                      std::span<const std::uint64_t> stream_ids) {
  if (const auto* pgd = std::get_if<PgdConfig>(&cfg)) {
    return pgd_attack_batch(model, x, labels, *pgd, objective, rule, stream_ids);
  }
  return patch_attack_batch(model, x, labels, std::get<PatchConfig>(cfg), objective, rule, stream_ids);
}

AttackConfig with_seed(AttackConfig cfg, std::uint64_t seed) {
  std::visit([seed](auto& c) { c.seed = seed; }, cfg);
  return cfg;
}

double budget_of(const AttackConfig& cfg) {
  return std::visit([](const auto& c) { return c.eps; }, cfg);
}

bool within_budget(std::span<const double> x, std::span<const double> x_adv, double eps, double tol) {
  if (x.size() != x_adv.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(std::abs(x_adv[i] - x[i]) <= eps + tol)) return false;
    if (!(x_adv[i] >= 0.0 && x_adv[i] <= 1.0)) return false;
  }
  return true;
}

double success_rate(std::span<const Label> decisions) {
  if (decisions.empty()) throw DomainError("success rate of an empty adversarial set is undefined");
  const auto accepted = std::count(decisions.begin(), decisions.end(), Label::kReal);
  return static_cast<double>(accepted) / static_cast<double>(decisions.size());
}

}  // namespace advfas
