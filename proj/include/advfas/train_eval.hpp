#pragma once

// Outer minimization (joint detector/corrector training and the two
// detector-only baselines), validation threshold selection, evaluation
// metrics, and the adaptive-attack sweep.

#include <cstdint>
#include <string>
#include <vector>

#include "advfas/attacks.hpp"
#include "advfas/coupled_core.hpp"
#include "advfas/dataset.hpp"
#include "advfas/metrics.hpp"
#include "advfas/model.hpp"

namespace advfas {

enum class TrainMode : std::uint8_t { kAdvFas, kClean, kPgdAt };

std::string_view to_string(TrainMode m);
TrainMode train_mode_from_string(std::string_view s);
// Baselines never train g, so they decide on f alone.
DecisionMode default_decision_mode(TrainMode m);

struct TrainConfig {
  double lambda = kDefaultLambda;
  double learning_rate = 1e-3;
  double weight_decay = 5e-5;
  bool corrector_weight_decay = true;  // off for the lambda = 0 degeneration
  std::size_t batch_size = 100;
  int epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  AttackConfig attack = PgdConfig{};
  bool validate_each_epoch = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Adam with L2 weight decay folded into the gradient. Parameters are rounded
// to float after every step.
class Adam {
 public:
  Adam() = default;
  Adam(const TwoHeadModel& model, const TrainConfig& cfg);

  // `frozen` groups are left untouched (no decay, no moment update).
  void step(TwoHeadModel& model, const ModelGrads& g, std::span<const ParamGroup> frozen = {});
  long steps() const noexcept { return t_; }

 private:
  double lr_ = 1e-3, wd_ = 0.0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  bool decay_corrector_ = true;
  long t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct EpochStats {
  double l_spoof = 0.0;
  double l_cor = 0.0;
  double l_cs = 0.0;
  double val_acc_clean = 0.0;  // percent, threshold 0.5
  double val_acc_adv = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

struct StepReport {
  LossTerms terms;
  std::size_t batch_examples = 0;
  std::size_t adversarial = 0;
};

// One optimizer step on an already assembled batch (examples + masks).
StepReport train_step(TwoHeadModel& model, Adam& opt, const TrainBatch& batch, TrainMode mode,
                      double lambda);

// Builds the batch for `clean` under `mode`: ADVFAS appends adversarial
// copies with mask 0, PGD_AT replaces spoof examples by their adversarial
// versions, CLEAN uses the examples as they are.
TrainBatch make_batch(std::span<const Example> clean, std::span<const std::uint64_t> stream_ids,
                      const TwoHeadModel& model, const TrainConfig& cfg, TrainMode mode, std::uint64_t shuffle_seed);

struct TrainResult {
  TwoHeadModel model;
  TrainHistory history;
};

TrainResult train(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg);
TrainResult baseline_train(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set,
                           const TrainConfig& cfg, TrainMode mode);
TrainResult train_mode(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set,
                       const TrainConfig& cfg, TrainMode mode);

// Decision scores (ES or f) for every example of `ds`.
std::vector<double> decision_scores(const TwoHeadModel& model, const Dataset& ds, DecisionMode mode);

ThresholdSelection select_threshold(const TwoHeadModel& model, const Dataset& val_set, DecisionMode mode);

struct EvalReport {
  double acc_clean = 0.0;  // percent
  double acc_adv = 0.0;    // percent of adversarial examples rejected
  double acc_avg = 0.0;
  double auc = 0.0;
  double success_rate = 0.0;  // percent, 100 - acc_adv
  double threshold = 0.5;
  DecisionMode decision_mode = DecisionMode::kES;
  std::size_t n_clean = 0;
  std::size_t n_adv = 0;

  bool operator==(const EvalReport&) const = default;
};

// Adversarial examples are crafted from every test spoof example with the
// detector-loss objective.
EvalReport evaluate(const TwoHeadModel& model, const Dataset& test_set, const AttackConfig& attack,
                    const DecisionRule& rule);

// Same, with an arbitrary attacker objective.
EvalReport evaluate_with_objective(const TwoHeadModel& model, const Dataset& test_set, const AttackConfig& attack,
                                   const AttackObjective& objective, const DecisionRule& rule);

struct SweepRow {
  AdaptiveObjective objective = AdaptiveObjective::kSpoofPlusEns;
  double eta = 0.0;
  double acc_adv = 0.0;
  double acc_avg = 0.0;

  bool operator==(const SweepRow&) const = default;
};

std::vector<SweepRow> adaptive_sweep(const TwoHeadModel& model, const Dataset& test_set, const PgdConfig& pgd,
                                     std::span<const double> eta_values, const DecisionRule& rule);

}  // namespace advfas
