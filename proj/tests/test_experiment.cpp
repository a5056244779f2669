#include <filesystem>
#include <fstream>
#include <sstream>

#include "advfas/errors.hpp"
#include "advfas/experiment.hpp"
#include "doctest.h"

using namespace advfas;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("advfas_exp_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const fs::path& out) {
  auto c = experiment_config_from_json(R"({
    "data": {"dim": 16, "n_train": 30, "n_val": 10, "n_test": 10},
    "model": {"trunk_widths": [8], "head_width": 4},
    "train": {"epochs": 2, "batch_size": 20,
              "attack": {"kind": "pgd", "steps": 3}},
    "eval_attack": {"kind": "pgd", "steps": 3},
    "eta_grid": [0.0, 2.0],
    "theory": {"deltas": [0.0, 0.5], "f_step": 0.01, "g_step": 0.01, "lemma2_samples": 1000}
  })");
  c.out_dir = out;
  resolve_seed(c, 7, std::nullopt);
  return c;
}

}  // namespace

TEST_CASE("config JSON round trip and digest") {
  const auto c = tiny("/tmp/x");
  const auto back = experiment_config_from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.digest() == c.digest());
  CHECK(c.digest().size() == 16);
  auto moved = c;
  moved.out_dir = "/elsewhere";
  CHECK(moved.digest() == c.digest());
  auto changed = c;
  changed.train.lambda = 0.5;
  CHECK(changed.digest() != c.digest());
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("unknown or ill-typed keys name the key") {
  try {
    experiment_config_from_json(R"({"train": {"lamda": 1.0}})");
    FAIL("accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lamda") != std::string::npos);
  }
  CHECK_THROWS_AS(experiment_config_from_json(R"({"train": {"epochs": "many"}})"), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(R"({"decision_mode": "MAYBE"})"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("seed precedence: cli, then config, then environment, then 0") {
  auto c = experiment_config_from_json(R"({"seed": 5})");
  resolve_seed(c, 9, 11);
  CHECK(c.resolved_seed() == 9);
  c = experiment_config_from_json(R"({"seed": 5})");
  resolve_seed(c, std::nullopt, 11);
  CHECK(c.resolved_seed() == 5);
  c = experiment_config_from_json("{}");
  resolve_seed(c, std::nullopt, 11);
  CHECK(c.resolved_seed() == 11);
  CHECK(c.data.seed == 11);
  CHECK(c.train.seed == 11);
  c = experiment_config_from_json("{}");
  resolve_seed(c, std::nullopt, std::nullopt);
  CHECK(c.resolved_seed() == 0);
}

TEST_CASE("gen-data is deterministic and reports bad dims") {
  const auto dir = scratch("gen");
  auto c = tiny(dir);
  std::ostringstream out, err;
  REQUIRE(cmd_gen_data(c, out, err) == kExitOk);
  const auto first = slurp(dir / "data" / "train.afds");
  CHECK(fs::exists(dir / "data" / "test.manifest.txt"));
  CHECK(slurp(dir / "data" / "val.manifest.txt").find(c.digest()) != std::string::npos);
  REQUIRE(cmd_gen_data(c, out, err) == kExitOk);
  CHECK(slurp(dir / "data" / "train.afds") == first);

  c.data.dim = 15;
  std::ostringstream e2;
  CHECK(cmd_gen_data(c, out, e2) == kExitConfig);
  CHECK(e2.str().find("dim") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("missing inputs and corrupt checkpoints exit with the I/O code") {
  const auto dir = scratch("missing");
  const auto c = tiny(dir);
  std::ostringstream out, err;
  CHECK(cmd_train(c, TrainMode::kAdvFas, out, err) == kExitIo);
  REQUIRE(cmd_gen_data(c, out, err) == kExitOk);
  CHECK(cmd_eval(c, TrainMode::kAdvFas, out, err) == kExitIo);
  fs::create_directories(dir);
  std::ofstream(dir / "ADVFAS.afas") << "garbage";
  CHECK(cmd_eval(c, TrainMode::kAdvFas, out, err) == kExitIo);
  fs::remove_all(dir);
}

TEST_CASE("verify-theory: certified grid, delta = 1 rejected") {
  auto c = tiny(scratch("theory"));
  std::ostringstream out, err;
  CHECK(cmd_verify_theory(c, out, err) == kExitOk);
  CHECK(out.str().find("certified") != std::string::npos);
  CHECK(fs::exists(c.out_dir / "theory.json"));
  c.theory.deltas = {0.95};
  CHECK(cmd_verify_theory(c, out, err) == kExitOk);
  c.theory.deltas = {1.0};
  CHECK(cmd_verify_theory(c, out, err) == kExitConfig);
  fs::remove_all(c.out_dir);
}

TEST_CASE("tiny pipeline: train, eval and sweep write stamped, reproducible artifacts") {
  const auto dir = scratch("pipeline");
  const auto c = tiny(dir);
  std::ostringstream out, err;
  REQUIRE(cmd_gen_data(c, out, err) == kExitOk);
  for (auto mode : {TrainMode::kClean, TrainMode::kPgdAt, TrainMode::kAdvFas}) {
    REQUIRE(cmd_train(c, mode, out, err) == kExitOk);
    REQUIRE(cmd_eval(c, mode, out, err) == kExitOk);
  }
  const auto ckpt = slurp(dir / "ADVFAS.afas");
  const auto report = slurp(dir / "eval_ADVFAS.json");
  CHECK(report.find(c.digest()) != std::string::npos);
  CHECK(report.find("\"seed\": 7") != std::string::npos);
  CHECK(report.find(kArtifactVersion) != std::string::npos);
  CHECK(slurp(dir / "history_ADVFAS.csv").rfind("config_digest,seed,artifact_version", 0) == 0);

  REQUIRE(cmd_train(c, TrainMode::kAdvFas, out, err) == kExitOk);
  REQUIRE(cmd_eval(c, TrainMode::kAdvFas, out, err) == kExitOk);
  CHECK(slurp(dir / "ADVFAS.afas") == ckpt);
  CHECK(slurp(dir / "eval_ADVFAS.json") == report);

  REQUIRE(cmd_adaptive_sweep(c, TrainMode::kAdvFas, out, err) == kExitOk);
  const auto sweep = run_adaptive_sweep(c, TrainMode::kAdvFas);
  CHECK(sweep.rows.size() == 4 * c.eta_grid.size());
  for (const auto& row : sweep.rows) {
    if (row.eta == 0.0 && (row.objective == AdaptiveObjective::kSpoofPlusEns ||
                           row.objective == AdaptiveObjective::kSpoofPlusCor)) {
      CHECK(row.acc_avg == sweep.base.report.acc_avg);
    }
  }
  std::istringstream csv(slurp(dir / "sweep_ADVFAS.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1 + sweep.rows.size());
  fs::remove_all(dir);
}

TEST_CASE("exit codes by exception type") {
  CHECK(exit_code_for(ConfigError("x", "y")) == kExitConfig);
  CHECK(exit_code_for(DomainError("x")) == kExitConfig);
  CHECK(exit_code_for(ShapeError("x")) == kExitConfig);
  CHECK(exit_code_for(LoadError(LoadError::Kind::kTruncated, "x")) == kExitIo);
  CHECK(exit_code_for(IoError("x")) == kExitIo);
  CHECK(exit_code_for(NumericError("x")) == kExitNumeric);
}
