#include "advfas/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"

namespace advfas {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kAdvFas: return "ADVFAS";
    case TrainMode::kClean: return "CLEAN";
    case TrainMode::kPgdAt: return "PGD_AT";
  }
  return "?";
}

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "ADVFAS") return TrainMode::kAdvFas;
  if (s == "CLEAN") return TrainMode::kClean;
  if (s == "PGD_AT") return TrainMode::kPgdAt;
  throw ConfigError("mode", "unknown training mode '" + std::string(s) + "' (ADVFAS, CLEAN, PGD_AT)");
}

DecisionMode default_decision_mode(TrainMode m) {
  return m == TrainMode::kAdvFas ? DecisionMode::kES : DecisionMode::kFOnly;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (epochs < 0) throw ConfigError("epochs", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
}

Adam::Adam(const TwoHeadModel& model, const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      wd_(cfg.weight_decay),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.adam_eps),
      decay_corrector_(cfg.corrector_weight_decay) {
  for (const auto& p : model.params()) {
    m_.emplace_back(p.rows(), p.cols());
    v_.emplace_back(p.rows(), p.cols());
  }
}

void Adam::step(TwoHeadModel& model, const ModelGrads& g, std::span<const ParamGroup> frozen) {
  auto& params = model.params();
  if (g.tensors.size() != params.size() || m_.size() != params.size()) {
    throw ShapeError("Adam::step: gradient/parameter count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamGroup group = model.groups()[k];
    if (std::find(frozen.begin(), frozen.end(), group) != frozen.end()) continue;
    const double wd = group == ParamGroup::kCorrector && !decay_corrector_ ? 0.0 : wd_;
    auto& p = params[k].data();
    const auto& gr = g.tensors[k].data();
    auto& m = m_[k].data();
    auto& v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gr[i] + wd * p[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p[i] = static_cast<double>(static_cast<float>(p[i] - update));
    }
  }
}

namespace {

ad::Tensor stack(std::span<const Example> ex, std::size_t dim) {
  ad::Tensor t(ex.size(), dim);
  for (std::size_t r = 0; r < ex.size(); ++r) {
    if (ex[r].x.size() != dim) throw ShapeError("example length does not match model input");
    std::copy(ex[r].x.begin(), ex[r].x.end(), t.row_span(r).begin());
  }
  return t;
}

std::vector<Label> labels_of(std::span<const Example> ex) {
  std::vector<Label> l(ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) l[i] = ex[i].label;
  return l;
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term);
}

constexpr std::size_t kAttackChunk = 250;

// Crafts adversarial versions of the given spoof rows, chunked to bound memory.
std::vector<AttackResult> craft_all(const TwoHeadModel& model, const ad::Tensor& x,
                                    std::span<const std::uint64_t> streams, const AttackConfig& attack,
                                    const AttackObjective& objective, const DecisionRule& rule) {
  std::vector<AttackResult> out;
  out.reserve(x.rows());
  for (std::size_t begin = 0; begin < x.rows(); begin += kAttackChunk) {
    const std::size_t n = std::min(kAttackChunk, x.rows() - begin);
    ad::Tensor chunk(n, x.cols());
    for (std::size_t r = 0; r < n; ++r) {
      const auto src = x.row_span(begin + r);
      std::copy(src.begin(), src.end(), chunk.row_span(r).begin());
    }
    const std::vector<Label> labels(n, Label::kSpoof);
    auto res = craft_batch(model, chunk, labels, attack, objective, rule, streams.subspan(begin, n));
    for (auto& r : res) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

StepReport train_step(TwoHeadModel& model, Adam& opt, const TrainBatch& batch, TrainMode mode, double lambda) {
  if (batch.examples.empty()) throw DomainError("train_step: empty batch");
  if (batch.masks.size() != batch.examples.size()) throw ShapeError("train_step: mask count mismatch");
  const auto x = stack(batch.examples, model.config().input_dim);
  const auto labels = labels_of(batch.examples);

  const auto params = model.bind(true);
  const auto out = model.forward(params, ad::Var::constant(x));
  const auto per_example = model.config().score_map ? graph::spoof_loss_map(out.f_map, labels)
                                                    : graph::spoof_loss(out.f, labels);
  StepReport rep;
  rep.batch_examples = batch.examples.size();
  rep.adversarial = static_cast<std::size_t>(std::count(batch.masks.begin(), batch.masks.end(), 0));

  ad::Var loss;
  std::vector<ParamGroup> frozen;
  if (mode == TrainMode::kAdvFas) {
    const auto l_spoof = graph::masked_spoof_loss(per_example, batch.masks);
    require_finite(l_spoof.item(), "l_spoof");
    const auto cases = classify_cases(labels, out.f.value());
    const auto l_cor = ad::mean(graph::corrector_loss(out.f, out.g, cases));
    loss = graph::combined_loss(l_spoof, l_cor, lambda);
    rep.terms = make_loss_terms(l_spoof.item(), l_cor.item(), lambda);
  } else {
    loss = ad::mean(per_example);
    rep.terms = make_loss_terms(loss.item(), 0.0, 0.0);
    frozen.push_back(ParamGroup::kCorrector);
  }
  require_finite(rep.terms.l_spoof, "l_spoof");
  require_finite(rep.terms.l_cor, "l_cor");
  require_finite(rep.terms.l_cs, "l_cs");
  const auto g = grads(params, loss);
  for (const auto& t : g.tensors) {
    for (double v : t.data()) require_finite(v, "gradient");
  }
  opt.step(model, g, frozen);
  return rep;
}

TrainBatch make_batch(std::span<const Example> clean, std::span<const std::uint64_t> stream_ids,
                      const TwoHeadModel& model, const TrainConfig& cfg, TrainMode mode,
                      std::uint64_t shuffle_seed) {
  if (mode == TrainMode::kAdvFas) return assemble_batch(clean, stream_ids, model, cfg.attack, shuffle_seed);

  TrainBatch batch;
  batch.examples.assign(clean.begin(), clean.end());
  if (mode == TrainMode::kPgdAt) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      if (clean[i].label == Label::kSpoof) idx.push_back(i);
    }
    if (!idx.empty()) {
      ad::Tensor x(idx.size(), model.config().input_dim);
      std::vector<std::uint64_t> streams(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy(clean[idx[k]].x.begin(), clean[idx[k]].x.end(), x.row_span(k).begin());
        streams[k] = stream_ids[idx[k]];
      }
      const auto res = craft_all(model, x, streams, cfg.attack, AttackObjective::detector_loss(), {});
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (!res[k].finite) {
          ++batch.skipped;
          continue;
        }
        batch.examples[idx[k]] = {res[k].x_adv, Label::kSpoof, Origin::kAdversarial};
      }
    }
  }
  Rng rng(shuffle_seed);
  rng.shuffle(batch.examples.begin(), batch.examples.end());
  // Baselines have no corrector, so every example feeds the detector loss.
  batch.masks.assign(batch.examples.size(), 1);
  return batch;
}

namespace {

struct ValAccuracy {
  double clean = 0.0, adv = 0.0;
};

ValAccuracy quick_validation(const TwoHeadModel& model, const Dataset& val, const TrainConfig& cfg, TrainMode mode) {
  if (val.empty()) return {};
  const DecisionRule rule{default_decision_mode(mode), 0.5};
  const auto rep = evaluate(model, val, with_seed(cfg.attack, mix_seed(cfg.seed, 0x7a1)), rule);
  return {rep.acc_clean, rep.acc_adv};
}

}  // namespace

TrainResult train_mode(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set,
                       const TrainConfig& cfg, TrainMode mode) {
  cfg.validate();
  if (train_set.empty()) throw DomainError("train: empty training set");
  if (train_set.dim != model.config().input_dim) throw ShapeError("train: dataset dim does not match model");
  for (const auto& e : train_set.examples) {
    if (e.origin == Origin::kAdversarial) throw DomainError("train: training set must be clean");
  }
  TrainConfig run = cfg;
  run.attack = with_seed(cfg.attack, mix_seed(cfg.seed, 0xa77ac));

  Adam opt(model, run);
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < run.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(run.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());

    EpochStats stats;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += run.batch_size) {
      const std::size_t n = std::min(run.batch_size, order.size() - begin);
      std::vector<Example> clean(n);
      std::vector<std::uint64_t> streams(n);
      for (std::size_t k = 0; k < n; ++k) {
        clean[k] = train_set.examples[order[begin + k]];
        streams[k] = (static_cast<std::uint64_t>(epoch) << 32) | order[begin + k];
      }
      const std::uint64_t shuffle_seed =
          mix_seed(run.seed, (1ULL << 63) | (static_cast<std::uint64_t>(epoch) << 32) | n_batches);
      const auto batch = make_batch(clean, streams, model, run, mode, shuffle_seed);
      StepReport rep;
      try {
        rep = train_step(model, opt, batch, mode, run.lambda);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(n_batches) + ": " +
                           e.what());
      }
      stats.l_spoof += rep.terms.l_spoof;
      stats.l_cor += rep.terms.l_cor;
      stats.l_cs += rep.terms.l_cs;
      ++n_batches;
    }
    stats.l_spoof /= static_cast<double>(n_batches);
    stats.l_cor /= static_cast<double>(n_batches);
    stats.l_cs /= static_cast<double>(n_batches);
    if (run.validate_each_epoch) {
      const auto acc = quick_validation(model, val_set, run, mode);
      stats.val_acc_clean = acc.clean;
      stats.val_acc_adv = acc.adv;
    }
    result.history.epochs.push_back(stats);
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  return train_mode(std::move(model), train_set, val_set, cfg, TrainMode::kAdvFas);
}

TrainResult baseline_train(TwoHeadModel model, const Dataset& train_set, const Dataset& val_set,
                           const TrainConfig& cfg, TrainMode mode) {
  if (mode == TrainMode::kAdvFas) throw ConfigError("mode", "baseline_train takes CLEAN or PGD_AT");
  return train_mode(std::move(model), train_set, val_set, cfg, mode);
}

std::vector<double> decision_scores(const TwoHeadModel& model, const Dataset& ds, DecisionMode mode) {
  const auto scores = model.forward_batch(ds.features());
  const DecisionRule rule{mode, 0.5};
  std::vector<double> s(scores.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = rule.score(scores[i]);
  return s;
}

ThresholdSelection select_threshold(const TwoHeadModel& model, const Dataset& val_set, DecisionMode mode) {
  const auto scores = decision_scores(model, val_set, mode);
  const auto labels = labels_of(val_set.examples);
  return select_threshold(scores, labels);
}

EvalReport evaluate_with_objective(const TwoHeadModel& model, const Dataset& test_set, const AttackConfig& attack,
                                   const AttackObjective& objective, const DecisionRule& rule) {
  if (test_set.empty()) throw DomainError("evaluate: empty test set");
  if (test_set.dim != model.config().input_dim) throw ShapeError("evaluate: dataset dim does not match model");

  std::vector<std::size_t> clean_idx, spoof_idx;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    if (test_set.examples[i].origin == Origin::kAdversarial) continue;
    clean_idx.push_back(i);
    if (test_set.examples[i].label == Label::kSpoof) spoof_idx.push_back(i);
  }
  if (clean_idx.empty()) throw DomainError("evaluate: no clean examples");
  if (spoof_idx.empty()) throw DomainError("evaluate: no spoof examples to attack");

  const auto clean_scores = model.forward_batch(test_set.features(clean_idx));
  std::vector<double> all_scores;
  std::vector<Label> all_labels;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < clean_idx.size(); ++k) {
    const Label truth = test_set.examples[clean_idx[k]].label;
    correct += rule.decide(clean_scores[k]) == truth;
    all_scores.push_back(rule.score(clean_scores[k]));
    all_labels.push_back(truth);
  }

  std::vector<std::uint64_t> streams(spoof_idx.begin(), spoof_idx.end());
  const auto adv = craft_all(model, test_set.features(spoof_idx), streams, attack, objective, rule);
  ad::Tensor x_adv(adv.size(), test_set.dim);
  for (std::size_t k = 0; k < adv.size(); ++k) {
    std::copy(adv[k].x_adv.begin(), adv[k].x_adv.end(), x_adv.row_span(k).begin());
  }
  const auto adv_scores = model.forward_batch(x_adv);
  std::size_t rejected = 0;
  for (const auto& s : adv_scores) {
    rejected += rule.decide(s) == Label::kSpoof;
    all_scores.push_back(rule.score(s));
    all_labels.push_back(Label::kSpoof);
  }

  EvalReport r;
  r.decision_mode = rule.mode;
  r.threshold = rule.threshold;
  r.n_clean = clean_idx.size();
  r.n_adv = adv.size();
  r.acc_clean = 100.0 * static_cast<double>(correct) / static_cast<double>(r.n_clean);
  r.acc_adv = 100.0 * static_cast<double>(rejected) / static_cast<double>(r.n_adv);
  r.acc_avg = (r.acc_clean + r.acc_adv) / 2.0;
  r.success_rate = 100.0 - r.acc_adv;
  r.auc = auc(all_scores, all_labels);
  return r;
}

EvalReport evaluate(const TwoHeadModel& model, const Dataset& test_set, const AttackConfig& attack,
                    const DecisionRule& rule) {
  return evaluate_with_objective(model, test_set, attack, AttackObjective::detector_loss(), rule);
}

std::vector<SweepRow> adaptive_sweep(const TwoHeadModel& model, const Dataset& test_set, const PgdConfig& pgd,
                                     std::span<const double> eta_values, const DecisionRule& rule) {
  std::vector<SweepRow> rows;
  for (AdaptiveObjective obj : kAllAdaptiveObjectives) {
    for (double eta : eta_values) {
      const AdaptiveConfig cfg{obj, eta, pgd};
      const auto rep = evaluate_with_objective(model, test_set, pgd, cfg.to_objective(), rule);
      rows.push_back({obj, eta, rep.acc_adv, rep.acc_avg});
    }
  }
  return rows;
}

}  // namespace advfas
