#pragma once

#include <span>
#include <vector>

#include "advfas/coupled_core.hpp"

namespace advfas {

// ROC AUC as the Mann-Whitney statistic: P(score_real > score_spoof), ties
// counted 1/2. Throws DomainError unless both classes are present.
double auc(std::span<const double> scores, std::span<const Label> labels);

struct ThresholdSelection {
  double threshold = 0.5;
  double balanced_accuracy = 0.0;
};

// Balanced accuracy of the rule score >= t -> real.
double balanced_accuracy(std::span<const double> scores, std::span<const Label> labels, double t);

// Candidates are {0, 1} plus midpoints of adjacent distinct sorted scores.
std::vector<double> threshold_candidates(std::span<const double> scores);

// Maximizes balanced accuracy over the candidates; ties go to the smaller
// threshold. Throws DomainError on a single-class or empty set.
ThresholdSelection select_threshold(std::span<const double> scores, std::span<const Label> labels);

}  // namespace advfas
