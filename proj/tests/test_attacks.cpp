#include <algorithm>
#include <cmath>
#include <numeric>

#include "advfas/attacks.hpp"
#include "advfas/errors.hpp"
#include "advfas/rng.hpp"
#include "doctest.h"
#include "reference_net.hpp"

using namespace advfas;
using ad::Tensor;

namespace {

BackboneConfig small(std::uint64_t seed) {
  BackboneConfig c;
  c.input_dim = 16;
  c.trunk_widths = {12};
  c.head_width = 6;
  c.activation = Activation::kTanh;
  c.seed = seed;
  return c;
}

std::vector<double> probe(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(d);
  for (double& v : x) v = rng.uniform();
  return x;
}

// f = sigmoid(tanh(tanh(a . z))), z the standardized input: monotone along
// sign(a), so signed ascent on f can only go up.
TwoHeadModel monotone_model() {
  BackboneConfig c;
  c.input_dim = 4;
  c.trunk_widths = {1};
  c.head_width = 1;
  c.activation = Activation::kTanh;
  TwoHeadModel m(c);
  auto& p = m.params();
  p[0] = Tensor(1, 4, std::vector<double>{0.05, -0.1, 0.02, 0.08});
  p[2] = Tensor(1, 1, 1.0);
  p[4] = Tensor(1, 1, 1.0);
  return m;
}

}  // namespace

TEST_CASE("steps = 0 and eps = 0 leave the input unchanged") {
  const auto m = init_model(small(1));
  const auto x = probe(16, 2);
  PgdConfig cfg;
  cfg.steps = 0;
  CHECK(pgd_attack(m, x, Label::kSpoof, cfg).x_adv == x);
  cfg = PgdConfig{};
  cfg.eps = 0.0;
  CHECK(pgd_attack(m, x, Label::kSpoof, cfg).x_adv == x);
  PatchConfig pc;
  pc.steps = 0;
  CHECK(patch_attack(m, x, Label::kSpoof, pc).x_adv == x);
}

TEST_CASE("real inputs are rejected") {
  const auto m = init_model(small(1));
  CHECK_THROWS_AS(pgd_attack(m, probe(16, 1), Label::kReal, PgdConfig{}), DomainError);
  CHECK_THROWS_AS(patch_attack(m, probe(16, 1), Label::kReal, PatchConfig{}), DomainError);
}

TEST_CASE("FGSM step matches the sign of an independent input gradient") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = init_model(small(seed));
    const auto net = ref::from_model(m);
    auto x = probe(16, seed + 40);
    for (double& v : x) v = 0.2 + 0.6 * v;  // keep the step inside the box
    PgdConfig cfg;
    cfg.steps = 1;
    cfg.random_start = false;
    const auto r = pgd_attack(m, x, Label::kSpoof, cfg);
    // d BCE(f, 0) / dx through the reference network.
    const auto t = ref::forward(net, x);
    auto acc = ref::zero_grads(net, 16);
    ref::backward(net, t, ref::Vec{ref::bce_dp(t.f, 0.0)}, 0.0, acc);
    for (std::size_t i = 0; i < 16; ++i) {
      const double dir = acc.input[i] > 0 ? 1.0 : (acc.input[i] < 0 ? -1.0 : 0.0);
      CHECK(r.x_adv[i] == std::clamp(x[i] + cfg.effective_step() * dir, 0.0, 1.0));
    }
  }
}

TEST_CASE("PGD stays within the budget and the box") {
  const auto m = init_model(small(3));
  PgdConfig cfg;
  cfg.steps = 10;
  for (std::uint64_t k = 0; k < 200; ++k) {
    cfg.seed = k;
    const auto x = probe(16, k);
    const auto r = pgd_attack(m, x, Label::kSpoof, cfg);
    CHECK(within_budget(x, r.x_adv, cfg.eps));
    CHECK(r.objective_trace.size() == static_cast<std::size_t>(r.steps_used) + 1);
  }
}

TEST_CASE("patch attack touches only the region") {
  const auto m = init_model(small(4));
  PatchConfig cfg;
  cfg.region = {1, 1, 2, 2};
  const auto inside = cfg.pixels(16);
  CHECK(inside == std::vector<std::size_t>{5, 6, 9, 10});
  for (std::uint64_t k = 0; k < 50; ++k) {
    cfg.seed = k;
    const auto x = probe(16, k + 500);
    const auto r = patch_attack(m, x, Label::kSpoof, cfg);
    for (std::size_t i = 0; i < 16; ++i) {
      if (std::find(inside.begin(), inside.end(), i) == inside.end()) CHECK(r.x_adv[i] == x[i]);
      CHECK(r.x_adv[i] >= 0.0);
      CHECK(r.x_adv[i] <= 1.0);
    }
  }
  PatchConfig empty;
  empty.region = {0, 0, 0, 2};
  CHECK_THROWS_AS(empty.validate(16), ConfigError);
  PatchConfig outside;
  outside.region = {3, 3, 2, 2};
  CHECK_THROWS_AS(outside.validate(16), ConfigError);
  CHECK_THROWS_AS(PatchConfig{}.validate(15), ConfigError);
}

TEST_CASE("full-image patch is at least as strong as PGD at 16/255") {
  // Weakly trained-looking model: bias the detector toward spoof.
  auto m = init_model(small(6));
  m.params()[5][0] -= 2.0;
  PgdConfig pgd;
  PatchConfig patch;
  patch.region = {0, 0, 4, 4};
  patch.steps = 60;
  std::size_t pgd_wins = 0, patch_wins = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    pgd.seed = patch.seed = k;
    const auto x = probe(16, k + 900);
    const DecisionRule rule{DecisionMode::kFOnly, 0.5};
    pgd_wins += pgd_attack(m, x, Label::kSpoof, pgd, {}, rule).success;
    patch_wins += patch_attack(m, x, Label::kSpoof, patch, {}, rule).success;
  }
  CHECK(patch_wins >= pgd_wins);
}

TEST_CASE("adaptive objective mapping and eta = 0 degeneration") {
  const AdaptiveConfig a{AdaptiveObjective::kDetPlusCor, 2.5, {}};
  const auto o = a.to_objective();
  CHECK(o.det == 1.0);
  CHECK(o.cor == 2.5);
  CHECK(o.spoof == 0.0);
  CHECK(adaptive_objective_from_string(to_string(AdaptiveObjective::kSpoofPlusCor)) ==
        AdaptiveObjective::kSpoofPlusCor);
  CHECK_THROWS_AS(adaptive_objective_from_string("BOGUS"), ConfigError);
  CHECK_THROWS_AS((AdaptiveConfig{AdaptiveObjective::kDetPlusEns, -1.0, {}}.to_objective()), ConfigError);

  const auto m = init_model(small(7));
  const auto x = probe(16, 8);
  PgdConfig cfg;
  cfg.seed = 99;
  const auto plain = pgd_attack(m, x, Label::kSpoof, cfg);
  const auto adaptive = adaptive_attack(m, x, Label::kSpoof, {AdaptiveObjective::kSpoofPlusEns, 0.0, cfg});
  CHECK(plain.x_adv == adaptive.x_adv);
  CHECK(plain.objective_trace == adaptive.objective_trace);
}

TEST_CASE("large eta: ascent direction follows the expected score") {
  const auto m = init_model(small(10));
  const auto x = probe(16, 11);
  const Tensor xt(1, 16, x);
  const auto g_obj = objective_input_grad(m, xt, AdaptiveConfig{AdaptiveObjective::kDetPlusEns, 1e6, {}}.to_objective());
  const auto g_es = objective_input_grad(m, xt, AttackObjective{0.0, 0.0, 0.0, 1.0});
  for (std::size_t i = 0; i < 16; ++i) {
    if (std::abs(g_es[i]) > 1e-9) CHECK((g_obj[i] > 0) == (g_es[i] > 0));
  }
}

TEST_CASE("objective trace is nondecreasing on a monotone scorer") {
  const auto m = monotone_model();
  PgdConfig cfg;
  cfg.steps = 20;
  cfg.eps = 0.3;
  for (std::uint64_t k = 0; k < 20; ++k) {
    cfg.seed = k;
    const auto r = pgd_attack(m, probe(4, k), Label::kSpoof, cfg, AttackObjective{0.0, 1.0, 0.0, 0.0});
    for (std::size_t s = 1; s < r.objective_trace.size(); ++s) {
      CHECK(r.objective_trace[s] >= r.objective_trace[s - 1]);
    }
  }
}

TEST_CASE("batched attack equals per-example attacks and is deterministic") {
  const auto m = init_model(small(12));
  Tensor x(6, 16);
  for (std::size_t r = 0; r < 6; ++r) {
    const auto p = probe(16, 70 + r);
    std::copy(p.begin(), p.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * 16));
  }
  const std::vector<Label> labels(6, Label::kSpoof);
  std::vector<std::uint64_t> streams(6);
  std::iota(streams.begin(), streams.end(), std::uint64_t{30});
  PgdConfig cfg;
  cfg.seed = 5;
  const auto a = pgd_attack_batch(m, x, labels, cfg, {}, {}, streams);
  const auto b = pgd_attack_batch(m, x, labels, cfg, {}, {}, streams);
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(a[r].x_adv == b[r].x_adv);
    // Same stream alone in a batch of one.
    const Tensor one(1, 16, std::vector<double>(x.row_span(r).begin(), x.row_span(r).end()));
    const std::vector<std::uint64_t> s{streams[r]};
    const auto c = pgd_attack_batch(m, one, std::vector<Label>{Label::kSpoof}, cfg, {}, {}, s);
    CHECK(c[0].x_adv == a[r].x_adv);
  }
}

TEST_CASE("success rate") {
  CHECK(success_rate(std::vector<Label>{Label::kSpoof, Label::kSpoof}) == 0.0);
  CHECK(success_rate(std::vector<Label>{Label::kSpoof, Label::kReal}) == 0.5);
  CHECK_THROWS_AS(success_rate(std::vector<Label>{}), DomainError);
  CHECK(budget_of(AttackConfig{PgdConfig{}}) == 16.0 / 255.0);
  CHECK_FALSE(within_budget(std::vector<double>{0.5}, std::vector<double>{0.6}, 0.05));
  CHECK_FALSE(within_budget(std::vector<double>{0.99}, std::vector<double>{1.01}, 0.05));
}
