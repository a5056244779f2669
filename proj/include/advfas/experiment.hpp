#pragma once

// Experiment configuration and the command implementations behind the CLI.
// Every artifact written here carries the config digest, the resolved seed,
// and the artifact version.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advfas/attacks.hpp"
#include "advfas/dataset.hpp"
#include "advfas/model.hpp"
#include "advfas/train_eval.hpp"

namespace advfas {

inline constexpr const char* kArtifactVersion = "advfas-1";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4 };

struct TheorySettings {
  std::vector<double> deltas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double f_step = 1e-3;
  double g_step = 1e-3;
  std::uint64_t lemma2_samples = 10000;
};

// Backbone used by the experiment pipeline: the default trunk with wider
// heads.
inline BackboneConfig pipeline_backbone() {
  BackboneConfig b;
  b.head_width = 32;
  return b;
}

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;  // unset until resolved
  std::filesystem::path out_dir = "advfas_out";
  std::filesystem::path data_dir;  // empty: <out_dir>/data
  std::filesystem::path checkpoint;  // empty: <out_dir>/<mode>.afas
  SyntheticConfig data;
  BackboneConfig model = pipeline_backbone();
  TrainConfig train;
  AttackConfig eval_attack = PgdConfig{};
  std::vector<double> eta_grid{0.5, 1.0, 2.0, 5.0, 10.0};
  std::optional<DecisionMode> decision_mode;  // unset: ES for ADVFAS, F_ONLY for baselines
  TheorySettings theory;

  // Canonical JSON; parse(to_json()) reproduces the config.
  std::string to_json() const;
  // FNV-1a 64 of the canonical JSON without the path keys, 16 hex digits.
  std::string digest() const;
  std::uint64_t resolved_seed() const { return seed.value_or(0); }

  std::filesystem::path data_path() const { return data_dir.empty() ? out_dir / "data" : data_dir; }
  std::filesystem::path checkpoint_path(TrainMode mode) const;
};

// Unknown keys and ill-typed values raise ConfigError naming the key.
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Seed precedence: cli_seed, then the config file, then env_seed. The
// resolved seed is pushed into the data, model, training and attack configs.
void resolve_seed(ExperimentConfig& cfg, std::optional<std::uint64_t> cli_seed,
                  std::optional<std::uint64_t> env_seed);

std::string fnv1a_hex(std::string_view bytes);

// Throwing forms, used by the commands and by tests.
SyntheticSplits run_gen_data(const ExperimentConfig& cfg);
TrainResult run_train(const ExperimentConfig& cfg, TrainMode mode);

struct EvalOutcome {
  EvalReport report;
  ThresholdSelection selection;
  TrainMode mode = TrainMode::kAdvFas;
};

EvalOutcome run_eval(const ExperimentConfig& cfg, TrainMode mode);

struct SweepOutcome {
  std::vector<SweepRow> rows;
  EvalOutcome base;
};

SweepOutcome run_adaptive_sweep(const ExperimentConfig& cfg, TrainMode mode);

// Command wrappers: write artifacts under cfg.out_dir, print a summary to
// `out`, report errors on `err`, and return an ExitCode.
int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err);
int cmd_eval(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err);
int cmd_verify_theory(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_adaptive_sweep(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err);

// Maps the library's exception types to exit codes.
int exit_code_for(const std::exception& e);

}  // namespace advfas
