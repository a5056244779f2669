// advfas: data generation, training, evaluation, theory certification and
// adaptive-attack sweeps from one experiment config.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "advfas/errors.hpp"
#include "advfas/experiment.hpp"

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("ADVFAS_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw advfas::ConfigError("ADVFAS_SEED", std::string("not an unsigned integer: '") + v + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust face anti-spoofing on a synthetic testbed"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode = "ADVFAS";
  std::string out_dir;
  std::string checkpoint;

  auto add_common = [&](CLI::App* sub, bool with_mode) {
    sub->add_option("--config", config_path, "Experiment config (JSON)");
    sub->add_option("--seed", seed, "Seed; overrides the config and ADVFAS_SEED");
    sub->add_option("--out", out_dir, "Report directory");
    if (with_mode) {
      sub->add_option("--mode", mode, "ADVFAS, CLEAN or PGD_AT")->check(CLI::IsMember({"ADVFAS", "CLEAN", "PGD_AT"}));
      sub->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/<mode>.afas)");
    }
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/val/test splits");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint + history CSV");
  auto* eval = app.add_subcommand("eval", "Select a threshold on val and evaluate on test under attack");
  auto* theory = app.add_subcommand("verify-theory", "Enumerate the separation guarantees on a score grid");
  auto* sweep = app.add_subcommand("adaptive-sweep", "Evaluate the four adaptive objectives over the eta grid");
  add_common(gen, false);
  add_common(train, true);
  add_common(eval, true);
  add_common(theory, false);
  add_common(sweep, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : advfas::kExitConfig;
  }

  advfas::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = advfas::load_experiment_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    advfas::resolve_seed(cfg, seed, env_seed());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return advfas::exit_code_for(e);
  }

  const auto train_mode = advfas::train_mode_from_string(mode);
  if (*gen) return advfas::cmd_gen_data(cfg, std::cout, std::cerr);
  if (*train) return advfas::cmd_train(cfg, train_mode, std::cout, std::cerr);
  if (*eval) return advfas::cmd_eval(cfg, train_mode, std::cout, std::cerr);
  if (*theory) return advfas::cmd_verify_theory(cfg, std::cout, std::cerr);
  return advfas::cmd_adaptive_sweep(cfg, train_mode, std::cout, std::cerr);
}
