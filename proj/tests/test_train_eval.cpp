#include <cmath>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"
#include "advfas/train_eval.hpp"
#include "doctest.h"
#include "reference_net.hpp"

using namespace advfas;
using ad::Tensor;

namespace {

BackboneConfig tiny_model(std::uint64_t seed) {
  BackboneConfig c;
  c.input_dim = 16;
  c.trunk_widths = {6};
  c.head_width = 3;
  c.activation = Activation::kTanh;
  c.seed = seed;
  return c;
}

SyntheticSplits tiny_data(std::uint64_t seed, std::size_t n = 12) {
  SyntheticConfig c;
  c.dim = 16;
  c.n_train = n;
  c.n_val = 6;
  c.n_test = 10;
  c.seed = seed;
  return generate_synthetic(c);
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 10;
  t.validate_each_epoch = false;
  PgdConfig pgd;
  pgd.steps = 3;
  t.attack = pgd;
  return t;
}

// Hand-written Adam with L2 folded into the gradient, rounding to float.
struct HandAdam {
  std::vector<std::vector<double>> m, v;
  int t = 0;
  void step(std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& g, const TrainConfig& c) {
    if (m.empty()) {
      for (const auto& x : p) {
        m.emplace_back(x.size(), 0.0);
        v.emplace_back(x.size(), 0.0);
      }
    }
    ++t;
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k].size(); ++i) {
        const double gi = g[k][i] + c.weight_decay * p[k][i];
        m[k][i] = c.beta1 * m[k][i] + (1 - c.beta1) * gi;
        v[k][i] = c.beta2 * v[k][i] + (1 - c.beta2) * gi * gi;
        const double mh = m[k][i] / (1 - std::pow(c.beta1, t));
        const double vh = v[k][i] / (1 - std::pow(c.beta2, t));
        p[k][i] = static_cast<float>(p[k][i] - c.learning_rate * mh / (std::sqrt(vh) + c.adam_eps));
      }
    }
  }
};

std::vector<std::vector<double>> values(const TwoHeadModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& t : m.params()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

}  // namespace

TEST_CASE("mode names and decision defaults") {
  CHECK(to_string(TrainMode::kPgdAt) == "PGD_AT");
  CHECK(train_mode_from_string("CLEAN") == TrainMode::kClean);
  CHECK_THROWS_AS(train_mode_from_string("FOO"), ConfigError);
  CHECK(default_decision_mode(TrainMode::kAdvFas) == DecisionMode::kES);
  CHECK(default_decision_mode(TrainMode::kClean) == DecisionMode::kFOnly);
  TrainConfig t;
  t.lambda = -1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("Adam step matches a hand computation") {
  auto model = init_model(tiny_model(2));
  TrainConfig cfg;
  cfg.weight_decay = 1e-2;
  Adam opt(model, cfg);
  auto expect = values(model);
  HandAdam hand;
  Rng rng(4);
  for (int s = 0; s < 3; ++s) {
    ModelGrads g;
    std::vector<std::vector<double>> gv;
    for (std::size_t k = 0; k < model.params().size(); ++k) {
      Tensor t(model.params()[k].rows(), model.params()[k].cols());
      for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
      gv.emplace_back(t.data().begin(), t.data().end());
      g.tensors.push_back(t);
      g.groups.push_back(model.groups()[k]);
    }
    opt.step(model, g);
    hand.step(expect, gv, cfg);
  }
  CHECK(values(model) == expect);
  CHECK(opt.steps() == 3);
}

TEST_CASE("frozen groups are untouched") {
  auto model = init_model(tiny_model(3));
  const auto before = model;
  Adam opt(model, TrainConfig{});
  const auto p = model.bind(true);
  const auto out = model.forward(p, ad::Var::constant(Tensor(2, 16, 0.3)));
  const auto g = grads(p, ad::add(ad::sum(out.f), ad::sum(out.g)));
  const std::vector<ParamGroup> frozen{ParamGroup::kCorrector};
  opt.step(model, g, frozen);
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    if (model.groups()[k] == ParamGroup::kCorrector) {
      CHECK(model.params()[k].data() == before.params()[k].data());
    } else {
      CHECK(model.params()[k].data() != before.params()[k].data());
    }
  }
}

TEST_CASE("lambda = 0 leaves the corrector bit-identical") {
  const auto data = tiny_data(5);
  auto cfg = tiny_train(3);
  cfg.lambda = 0.0;
  cfg.corrector_weight_decay = false;
  const auto start = init_model(tiny_model(5));
  const auto r = train(start, data.train, data.val, cfg);
  bool detector_moved = false;
  for (std::size_t k = 0; k < start.params().size(); ++k) {
    if (start.groups()[k] == ParamGroup::kCorrector) {
      CHECK(r.model.params()[k].data() == start.params()[k].data());
    } else if (r.model.params()[k].data() != start.params()[k].data()) {
      detector_moved = true;
    }
  }
  CHECK(detector_moved);
}

TEST_CASE("one epoch, one batch equals a scripted replay") {
  const auto data = tiny_data(8, 5);  // 10 examples
  auto cfg = tiny_train(1);
  cfg.batch_size = 10;
  PgdConfig fgsm;
  fgsm.steps = 1;
  fgsm.random_start = false;
  fgsm.step_size = fgsm.eps;
  cfg.attack = fgsm;
  const auto start = init_model(tiny_model(8));
  const auto trained = train(start, data.train, data.val, cfg).model;

  // Replay with the scalar network: FGSM copies of every spoof, cases from
  // the current detector, masked detector loss + corrector loss, Adam.
  const auto net = ref::from_model(start);
  std::vector<ref::Vec> xs;
  std::vector<int> ys, ms;
  for (const auto& e : data.train.examples) {
    xs.push_back(e.x);
    ys.push_back(to_int(e.label));
    ms.push_back(1);
  }
  const std::size_t n_clean = xs.size();
  for (std::size_t i = 0; i < n_clean; ++i) {
    if (ys[i] != 0) continue;
    const auto t = ref::forward(net, xs[i]);
    auto acc = ref::zero_grads(net, 16);
    ref::backward(net, t, ref::Vec{ref::bce_dp(t.f, 0.0)}, 0.0, acc);
    ref::Vec xa = xs[i];
    for (std::size_t j = 0; j < 16; ++j) {
      const double dir = acc.input[j] > 0 ? 1.0 : (acc.input[j] < 0 ? -1.0 : 0.0);
      xa[j] = std::clamp(xs[i][j] + fgsm.eps * dir, std::max(0.0, xs[i][j] - fgsm.eps), std::min(1.0, xs[i][j] + fgsm.eps));
    }
    xs.push_back(xa);
    ys.push_back(0);
    ms.push_back(0);
  }
  std::vector<ref::Case> cases;
  ref::Vec fbar;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    fbar.push_back(ref::forward(net, xs[i]).f);
    cases.push_back(ref::classify(ys[i], fbar.back()));
  }
  const auto loss = ref::advfas_loss(net, xs, ys, ms, cases, fbar, cfg.lambda);
  auto expect = values(start);
  HandAdam hand;
  hand.step(expect, ref::flatten(loss.grads), cfg);

  const auto got = values(trained);
  for (std::size_t k = 0; k < got.size(); ++k) {
    for (std::size_t i = 0; i < got[k].size(); ++i) {
      // One float ulp of slack for summation order.
      CHECK(got[k][i] == doctest::Approx(expect[k][i]).epsilon(2.0 * 1.2e-7).scale(1e-30));
    }
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto data = tiny_data(9);
  auto model = init_model(tiny_model(9));
  model.params()[0][0] = NAN;
  try {
    train(model, data.train, data.val, tiny_train(1));
    FAIL("no error");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 0, batch 0") != std::string::npos);
    CHECK(what.find("l_spoof") != std::string::npos);
  }
}

TEST_CASE("baselines keep the corrector frozen and training is deterministic") {
  const auto data = tiny_data(10);
  const auto start = init_model(tiny_model(10));
  for (auto mode : {TrainMode::kClean, TrainMode::kPgdAt}) {
    const auto a = baseline_train(start, data.train, data.val, tiny_train(2), mode);
    const auto b = baseline_train(start, data.train, data.val, tiny_train(2), mode);
    CHECK(a.model == b.model);
    for (std::size_t k = 0; k < start.params().size(); ++k) {
      if (start.groups()[k] == ParamGroup::kCorrector) CHECK(a.model.params()[k].data() == start.params()[k].data());
    }
  }
  const auto a = train(start, data.train, data.val, tiny_train(2));
  const auto b = train(start, data.train, data.val, tiny_train(2));
  CHECK(a.model == b.model);
  CHECK(a.history.epochs.size() == 2);
}

TEST_CASE("PGD_AT batches replace spoofs, ADVFAS batches append them") {
  const auto data = tiny_data(11, 3);
  const auto model = init_model(tiny_model(11));
  std::vector<std::uint64_t> ids(data.train.size());
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  const auto cfg = tiny_train(1);
  const auto pgd = make_batch(data.train.examples, ids, model, cfg, TrainMode::kPgdAt, 1);
  CHECK(pgd.examples.size() == 6);
  CHECK(std::count_if(pgd.examples.begin(), pgd.examples.end(),
                      [](const Example& e) { return e.origin == Origin::kAdversarial; }) == 3);
  CHECK(std::count(pgd.masks.begin(), pgd.masks.end(), 1) == 6);
  const auto adv = make_batch(data.train.examples, ids, model, cfg, TrainMode::kAdvFas, 1);
  CHECK(adv.examples.size() == 9);
  const auto clean = make_batch(data.train.examples, ids, model, cfg, TrainMode::kClean, 1);
  CHECK(clean.examples.size() == 6);
}

TEST_CASE("constant model: AUC 1/2 and accuracy identity") {
  const auto data = tiny_data(12);
  const TwoHeadModel zero(tiny_model(0));
  const auto r = evaluate(zero, data.test, PgdConfig{}, DecisionRule{DecisionMode::kES, 0.5});
  CHECK(r.auc == 0.5);
  CHECK(r.acc_clean == 50.0);
  CHECK(r.acc_adv == 100.0);
  CHECK(r.acc_avg == (r.acc_clean + r.acc_adv) / 2.0);
  CHECK(r.success_rate == 0.0);
  CHECK(r.n_adv == data.test.count(Label::kSpoof));
  const auto sel = select_threshold(zero, data.val, DecisionMode::kES);
  CHECK(sel.balanced_accuracy == 0.5);
}

TEST_CASE("oracle-like model scores perfectly") {
  // Constant images: reals all 1, spoofs all 0. A steep monotone model in
  // the mean pixel accepts only reals, and 16/255 cannot bridge the gap.
  BackboneConfig c;
  c.input_dim = 4;
  c.trunk_widths = {1};
  c.head_width = 1;
  c.activation = Activation::kTanh;
  TwoHeadModel m(c);
  m.params()[0] = Tensor(1, 4, 1.0);
  m.params()[2] = Tensor(1, 1, 3.0);
  m.params()[4] = Tensor(1, 1, 60.0);
  m.params()[5] = Tensor(1, 1, 0.0);
  m.params()[9] = Tensor(1, 1, 60.0);
  Dataset ds;
  ds.dim = 4;
  for (int i = 0; i < 6; ++i) {
    ds.examples.push_back({std::vector<double>(4, 1.0), Label::kReal, Origin::kCleanReal});
    ds.examples.push_back({std::vector<double>(4, 0.0), Label::kSpoof, Origin::kCleanSpoof});
  }
  const auto r = evaluate(m, ds, PgdConfig{}, DecisionRule{DecisionMode::kES, 0.5});
  CHECK(r.acc_clean == 100.0);
  CHECK(r.acc_adv == 100.0);
  CHECK(r.auc == 1.0);
  CHECK_THROWS_AS(evaluate(m, Dataset{4, {}}, PgdConfig{}, {}), DomainError);
}

TEST_CASE("evaluation and sweep are deterministic; eta = 0 spoof rows equal the plain evaluation") {
  const auto data = tiny_data(13);
  const auto model = train(init_model(tiny_model(13)), data.train, data.val, tiny_train(2)).model;
  PgdConfig pgd;
  pgd.steps = 4;
  pgd.seed = 3;
  const DecisionRule rule{DecisionMode::kES, 0.45};
  const auto a = evaluate(model, data.test, pgd, rule), b = evaluate(model, data.test, pgd, rule);
  CHECK(a == b);
  const std::vector<double> etas{0.0, 1.0};
  const auto rows = adaptive_sweep(model, data.test, pgd, etas, rule);
  CHECK(rows.size() == 8);
  CHECK(rows == adaptive_sweep(model, data.test, pgd, etas, rule));
  for (const auto& row : rows) {
    if (row.eta == 0.0 && (row.objective == AdaptiveObjective::kSpoofPlusEns ||
                           row.objective == AdaptiveObjective::kSpoofPlusCor)) {
      CHECK(row.acc_adv == a.acc_adv);
      CHECK(row.acc_avg == a.acc_avg);
    }
  }
}

TEST_CASE("training loss trends down over the first five epochs on the defaults") {
  SyntheticConfig d;
  d.n_train = 500;
  d.n_val = 50;
  d.n_test = 10;
  d.seed = 1;
  const auto data = generate_synthetic(d);
  TrainConfig t;
  t.epochs = 5;
  t.validate_each_epoch = false;
  BackboneConfig mc;
  mc.seed = 1;
  const auto h = train(init_model(mc), data.train, data.val, t).history;
  // Least-squares slope of l_cs against the epoch index.
  double sx = 0, sy = 0, sxy = 0, sxx = 0;
  for (int e = 0; e < 5; ++e) {
    const double y = h.epochs[static_cast<std::size_t>(e)].l_cs;
    sx += e;
    sy += y;
    sxy += e * y;
    sxx += e * e;
  }
  const double slope = (5 * sxy - sx * sy) / (5 * sxx - sx * sx);
  CHECK(slope < 0.0);
  CHECK(h.epochs.back().l_cs < h.epochs.front().l_cs);
}
