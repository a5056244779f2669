#include "advfas/coupled_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advfas/errors.hpp"

namespace advfas {

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw DomainError(std::string(what) + " = " + std::to_string(v) + " outside [0,1]");
  }
}

}  // namespace

Label label_from_int(int v) {
  if (v != 0 && v != 1) throw DomainError("label must be 0 or 1, got " + std::to_string(v));
  return static_cast<Label>(v);
}

CoupledScores CoupledScores::make(double f, double g) {
  return {f, g, expected_score(f, g)};
}

std::string_view to_string(DetectionCase c) {
  switch (c) {
    case DetectionCase::kTP: return "TP";
    case DetectionCase::kFP: return "FP";
    case DetectionCase::kTN: return "TN";
    case DetectionCase::kFN: return "FN";
  }
  return "?";
}

DetectionCase classify_case(Label label, double f) {
  check_unit(f, "f");
  const bool predicted_real = f >= 0.5;
  if (label == Label::kReal) return predicted_real ? DetectionCase::kTP : DetectionCase::kFN;
  return predicted_real ? DetectionCase::kFP : DetectionCase::kTN;
}

double expected_score(double f, double g) {
  check_unit(f, "f");
  check_unit(g, "g");
  return f * g;
}

ELabel e_label(DetectionCase c, double f) {
  switch (c) {
    case DetectionCase::kFP: return ELabel::zero();
    case DetectionCase::kFN: return ELabel::one();
    case DetectionCase::kTP:
    case DetectionCase::kTN: return ELabel::pass_through(f);
  }
  return ELabel::zero();
}

double bce(double p, double t) {
  const double pc = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(t * std::log(pc) + (1.0 - t) * std::log1p(-pc));
}

double corrector_loss(const CoupledScores& scores, DetectionCase c) {
  return bce(scores.f * scores.g, e_label(c, scores.f).value);
}

double spoof_loss(double f, Label label) { return bce(f, to_int(label)); }

double masked_spoof_loss(std::uint8_t mask, double loss) {
  if (mask > 1) throw DomainError("mask must be 0 or 1");
  return mask ? loss : 0.0;
}

double masked_mean(std::span<const std::uint8_t> masks, std::span<const double> losses) {
  if (masks.size() != losses.size()) throw ShapeError("masked_mean: masks/losses length mismatch");
  double acc = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (!masks[i]) continue;
    acc += losses[i];
    ++kept;
  }
  return kept ? acc / static_cast<double>(kept) : 0.0;
}

double combined_loss(double l_spoof, double l_cor, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
  return l_spoof + lambda * l_cor;
}

LossTerms make_loss_terms(double l_spoof, double l_cor, double lambda) {
  return {l_spoof, l_cor, lambda, combined_loss(l_spoof, l_cor, lambda)};
}

Label decide(double es, double threshold) { return es >= threshold ? Label::kReal : Label::kSpoof; }

std::vector<DetectionCase> classify_cases(std::span<const Label> labels, const ad::Tensor& f) {
  if (f.cols() != 1 || f.rows() != labels.size()) throw ShapeError("classify_cases: shape mismatch");
  std::vector<DetectionCase> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = classify_case(labels[i], f[i]);
  return out;
}

namespace graph {

namespace {

ad::Tensor label_column(std::span<const Label> labels, std::size_t cols) {
  ad::Tensor t(labels.size(), cols);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = to_int(labels[r]);
  }
  return t;
}

}  // namespace

ad::Var bce(const ad::Var& p, const ad::Var& t) { return ad::bce(p, t, kBceEpsilon); }

ad::Var spoof_loss(const ad::Var& f, std::span<const Label> labels) {
  if (f.cols() != 1 || f.rows() != labels.size()) throw ShapeError("spoof_loss: shape mismatch");
  return bce(f, ad::Var::constant(label_column(labels, 1)));
}

ad::Var spoof_loss_map(const ad::Var& f_map, std::span<const Label> labels) {
  if (f_map.rows() != labels.size()) throw ShapeError("spoof_loss_map: shape mismatch");
  return ad::row_mean(bce(f_map, ad::Var::constant(label_column(labels, f_map.cols()))));
}

ad::Var corrector_loss(const ad::Var& f, const ad::Var& g, std::span<const DetectionCase> cases) {
  if (f.cols() != 1 || f.rows() != cases.size() || !f.value().same_shape(g.value())) {
    throw ShapeError("corrector_loss: shape mismatch");
  }
  const std::size_t n = cases.size();
  std::vector<std::uint8_t> correct(n);
  ad::Tensor target(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    correct[i] = is_correct(cases[i]);
    target[i] = e_label(cases[i], f.value()[i]).value;
  }
  const ad::Var f_used = ad::select_rows(correct, ad::detach(f), f);
  return bce(ad::mul(f_used, g), ad::Var::constant(std::move(target)));
}

ad::Var masked_spoof_loss(const ad::Var& per_example, std::span<const std::uint8_t> masks) {
  std::vector<double> w(masks.begin(), masks.end());
  for (double m : w) {
    if (m != 0.0 && m != 1.0) throw DomainError("mask must be 0 or 1");
  }
  return ad::weighted_mean(per_example, w);
}

ad::Var combined_loss(const ad::Var& l_spoof, const ad::Var& l_cor, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
  return ad::add(l_spoof, ad::scale(l_cor, lambda));
}

}  // namespace graph

}  // namespace advfas
