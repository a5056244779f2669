#include "advfas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advfas/errors.hpp"

namespace advfas {

namespace {

void check_inputs(std::span<const double> scores, std::span<const Label> labels, const char* what) {
  if (scores.size() != labels.size()) throw ShapeError(std::string(what) + ": scores/labels length mismatch");
  if (scores.empty()) throw DomainError(std::string(what) + ": empty score set");
  const auto n_real = std::count(labels.begin(), labels.end(), Label::kReal);
  if (n_real == 0 || n_real == static_cast<std::ptrdiff_t>(labels.size())) {
    throw DomainError(std::string(what) + ": both classes must be present");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError(std::string(what) + ": non-finite score");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const Label> labels) {
  check_inputs(scores, labels, "auc");
  // Rank-sum with midranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_real = 0.0;
  std::size_t n_real = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Label::kReal) {
        rank_sum_real += midrank;
        ++n_real;
      }
    }
    i = j;
  }
  const double n1 = static_cast<double>(n_real);
  const double n0 = static_cast<double>(scores.size() - n_real);
  return (rank_sum_real - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

double balanced_accuracy(std::span<const double> scores, std::span<const Label> labels, double t) {
  check_inputs(scores, labels, "balanced_accuracy");
  std::size_t tp = 0, tn = 0, n_real = 0, n_spoof = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool accept = scores[i] >= t;
    if (labels[i] == Label::kReal) {
      ++n_real;
      tp += accept;
    } else {
      ++n_spoof;
      tn += !accept;
    }
  }
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(n_real) +
                static_cast<double>(tn) / static_cast<double>(n_spoof));
}

std::vector<double> threshold_candidates(std::span<const double> scores) {
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> c{0.0};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) c.push_back(0.5 * (s[i] + s[i + 1]));
  c.push_back(1.0);
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

ThresholdSelection select_threshold(std::span<const double> scores, std::span<const Label> labels) {
  check_inputs(scores, labels, "select_threshold");
  const auto cand = threshold_candidates(scores);

  // Sweep candidates in increasing order; pointer into sorted scores tracks
  // how many of each class fall below the threshold.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t n_real = 0;
  for (Label l : labels) n_real += l == Label::kReal;
  const std::size_t n_spoof = labels.size() - n_real;

  ThresholdSelection best{cand.front(), -1.0};
  std::size_t below = 0, real_below = 0, spoof_below = 0;
  for (double t : cand) {
    while (below < order.size() && scores[order[below]] < t) {
      (labels[order[below]] == Label::kReal ? real_below : spoof_below) += 1;
      ++below;
    }
    const double tpr = static_cast<double>(n_real - real_below) / static_cast<double>(n_real);
    const double tnr = static_cast<double>(spoof_below) / static_cast<double>(n_spoof);
    const double ba = 0.5 * (tpr + tnr);
    if (ba > best.balanced_accuracy) best = {t, ba};
  }
  return best;
}

}  // namespace advfas
