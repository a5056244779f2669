#include "advfas/experiment.hpp"

#include <charconv>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <sstream>

#include "advfas/errors.hpp"
#include "advfas/rng.hpp"
#include "advfas/theory_oracle.hpp"
#include "binary_io.hpp"
#include "json.hpp"

namespace advfas {

using nlohmann::json;

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return s;
}

namespace {

json attack_to_json(const AttackConfig& a) {
  if (const auto* p = std::get_if<PgdConfig>(&a)) {
    return {{"kind", "pgd"},
            {"eps", p->eps},
            {"steps", p->steps},
            {"step_size", p->step_size},
            {"random_start", p->random_start}};
  }
  const auto& c = std::get<PatchConfig>(a);
  return {{"kind", "patch"},         {"row", c.region.row},     {"col", c.region.col},
          {"height", c.region.height}, {"width", c.region.width}, {"eps", c.eps},
          {"steps", c.steps},          {"step_size", c.step_size}, {"random_start", c.random_start}};
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where.empty() ? key : where + "." + key, "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, const std::string& where, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where.empty() ? key : where + "." + key, "has the wrong type");
  }
}

AttackConfig attack_from_json(const json& j, const std::string& where) {
  std::string kind = "pgd";
  read(j, "kind", where, kind);
  if (kind == "pgd") {
    check_keys(j, where, {"kind", "eps", "steps", "step_size", "random_start"});
    PgdConfig p;
    read(j, "eps", where, p.eps);
    read(j, "steps", where, p.steps);
    read(j, "step_size", where, p.step_size);
    read(j, "random_start", where, p.random_start);
    p.validate();
    return p;
  }
  if (kind == "patch") {
    check_keys(j, where, {"kind", "row", "col", "height", "width", "eps", "steps", "step_size", "random_start"});
    PatchConfig c;
    read(j, "row", where, c.region.row);
    read(j, "col", where, c.region.col);
    read(j, "height", where, c.region.height);
    read(j, "width", where, c.region.width);
    read(j, "eps", where, c.eps);
    read(j, "steps", where, c.steps);
    read(j, "step_size", where, c.step_size);
    read(j, "random_start", where, c.random_start);
    return c;
  }
  throw ConfigError(where + ".kind", "unknown attack kind '" + kind + "' (pgd, patch)");
}

}  // namespace

std::filesystem::path ExperimentConfig::checkpoint_path(TrainMode mode) const {
  if (!checkpoint.empty()) return checkpoint;
  return out_dir / (std::string(to_string(mode)) + ".afas");
}

std::string ExperimentConfig::to_json() const {
  json j;
  if (seed) j["seed"] = *seed;
  j["out_dir"] = out_dir.generic_string();
  j["data_dir"] = data_dir.generic_string();
  j["checkpoint"] = checkpoint.generic_string();
  j["data"] = {{"dim", data.dim},
               {"n_train", data.n_train},
               {"n_val", data.n_val},
               {"n_test", data.n_test},
               {"noise_sigma", data.noise_sigma},
               {"amplitude", data.amplitude},
               {"brightness_offset", data.brightness_offset},
               {"brightness_agreement_real", data.brightness_agreement_real},
               {"brightness_agreement_spoof", data.brightness_agreement_spoof},
               {"real_freqs", data.real_freqs},
               {"spoof_freqs", data.spoof_freqs}};
  j["model"] = {{"trunk_widths", model.trunk_widths},
                {"head_width", model.head_width},
                {"activation", model.activation == Activation::kRelu ? "relu" : "tanh"},
                {"input_mean", model.input_mean},
                {"input_std", model.input_std},
                {"score_map", model.score_map}};
  j["train"] = {{"lambda", train.lambda},
                {"learning_rate", train.learning_rate},
                {"weight_decay", train.weight_decay},
                {"corrector_weight_decay", train.corrector_weight_decay},
                {"batch_size", train.batch_size},
                {"epochs", train.epochs},
                {"validate_each_epoch", train.validate_each_epoch},
                {"attack", attack_to_json(train.attack)}};
  j["eval_attack"] = attack_to_json(eval_attack);
  j["eta_grid"] = eta_grid;
  if (decision_mode) j["decision_mode"] = std::string(to_string(*decision_mode));
  j["theory"] = {{"deltas", theory.deltas},
                 {"f_step", theory.f_step},
                 {"g_step", theory.g_step},
                 {"lemma2_samples", theory.lemma2_samples}};
  return j.dump(2);
}

std::string ExperimentConfig::digest() const {
  // Locations are excluded so the same experiment digests identically in
  // any output directory.
  json j = json::parse(to_json());
  j.erase("out_dir");
  j.erase("data_dir");
  j.erase("checkpoint");
  return fnv1a_hex(j.dump());
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"seed", "out_dir", "data_dir", "checkpoint", "data", "model", "train", "eval_attack", "eta_grid",
                     "decision_mode", "theory"});
  ExperimentConfig c;
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read(j, "seed", "", s);
    c.seed = s;
  }
  std::string path;
  if (j.contains("out_dir")) {
    read(j, "out_dir", "", path);
    c.out_dir = path;
  }
  if (j.contains("data_dir")) {
    read(j, "data_dir", "", path);
    c.data_dir = path;
  }
  if (j.contains("checkpoint")) {
    read(j, "checkpoint", "", path);
    c.checkpoint = path;
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"dim", "n_train", "n_val", "n_test", "noise_sigma", "amplitude", "brightness_offset",
                           "brightness_agreement_real", "brightness_agreement_spoof", "real_freqs", "spoof_freqs"});
    read(d, "dim", "data", c.data.dim);
    read(d, "n_train", "data", c.data.n_train);
    read(d, "n_val", "data", c.data.n_val);
    read(d, "n_test", "data", c.data.n_test);
    read(d, "noise_sigma", "data", c.data.noise_sigma);
    read(d, "amplitude", "data", c.data.amplitude);
    read(d, "brightness_offset", "data", c.data.brightness_offset);
    read(d, "brightness_agreement_real", "data", c.data.brightness_agreement_real);
    read(d, "brightness_agreement_spoof", "data", c.data.brightness_agreement_spoof);
    read(d, "real_freqs", "data", c.data.real_freqs);
    read(d, "spoof_freqs", "data", c.data.spoof_freqs);
  }
  c.data.validate();
  c.model.input_dim = c.data.dim;
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"trunk_widths", "head_width", "activation", "input_mean", "input_std", "score_map"});
    read(m, "trunk_widths", "model", c.model.trunk_widths);
    read(m, "head_width", "model", c.model.head_width);
    std::string act = "relu";
    read(m, "activation", "model", act);
    if (act == "relu") {
      c.model.activation = Activation::kRelu;
    } else if (act == "tanh") {
      c.model.activation = Activation::kTanh;
    } else {
      throw ConfigError("model.activation", "unknown activation '" + act + "'");
    }
    read(m, "input_mean", "model", c.model.input_mean);
    read(m, "input_std", "model", c.model.input_std);
    read(m, "score_map", "model", c.model.score_map);
  }
  c.model.validate();
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"lambda", "learning_rate", "weight_decay", "corrector_weight_decay", "batch_size", "epochs",
                            "validate_each_epoch", "attack"});
    read(t, "lambda", "train", c.train.lambda);
    read(t, "learning_rate", "train", c.train.learning_rate);
    read(t, "weight_decay", "train", c.train.weight_decay);
    read(t, "corrector_weight_decay", "train", c.train.corrector_weight_decay);
    read(t, "batch_size", "train", c.train.batch_size);
    read(t, "epochs", "train", c.train.epochs);
    read(t, "validate_each_epoch", "train", c.train.validate_each_epoch);
    if (t.contains("attack")) c.train.attack = attack_from_json(t["attack"], "train.attack");
  }
  c.train.validate();
  if (j.contains("eval_attack")) c.eval_attack = attack_from_json(j["eval_attack"], "eval_attack");
  if (const auto* p = std::get_if<PatchConfig>(&c.train.attack)) p->validate(c.data.dim);
  if (const auto* p = std::get_if<PatchConfig>(&c.eval_attack)) p->validate(c.data.dim);
  read(j, "eta_grid", "", c.eta_grid);
  for (double eta : c.eta_grid) {
    if (!(eta >= 0.0)) throw ConfigError("eta_grid", "values must be non-negative");
  }
  if (j.contains("decision_mode")) {
    std::string m;
    read(j, "decision_mode", "", m);
    try {
      c.decision_mode = decision_mode_from_string(m);
    } catch (const std::exception&) {
      throw ConfigError("decision_mode", "unknown decision mode '" + m + "' (ES, F_ONLY)");
    }
  }
  if (j.contains("theory")) {
    const auto& t = j["theory"];
    check_keys(t, "theory", {"deltas", "f_step", "g_step", "lemma2_samples"});
    read(t, "deltas", "theory", c.theory.deltas);
    read(t, "f_step", "theory", c.theory.f_step);
    read(t, "g_step", "theory", c.theory.g_step);
    read(t, "lemma2_samples", "theory", c.theory.lemma2_samples);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const LoadError& e) {
    throw IoError(e.what());
  }
  return experiment_config_from_json(text);
}

void resolve_seed(ExperimentConfig& cfg, std::optional<std::uint64_t> cli_seed,
                  std::optional<std::uint64_t> env_seed) {
  if (cli_seed) {
    cfg.seed = cli_seed;
  } else if (!cfg.seed) {
    cfg.seed = env_seed.value_or(0);
  }
  const std::uint64_t s = *cfg.seed;
  cfg.data.seed = s;
  cfg.model.seed = mix_seed(s, 0x6d6f64656cULL);
  cfg.train.seed = s;
  cfg.eval_attack = with_seed(cfg.eval_attack, mix_seed(s, 0x6576616cULL));
}

namespace {

constexpr const char* kSplitNames[] = {"train", "val", "test"};

Dataset load_split(const ExperimentConfig& cfg, const char* split) {
  return load_dataset(cfg.data_path() / (std::string(split) + ".afds"), cfg.data.dim);
}

std::string provenance_json(const ExperimentConfig& cfg, TrainMode mode) {
  return json{{"config_digest", cfg.digest()},
              {"seed", cfg.resolved_seed()},
              {"artifact_version", kArtifactVersion},
              {"mode", std::string(to_string(mode))}}
      .dump();
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

TwoHeadModel load_model_for(const ExperimentConfig& cfg, TrainMode mode) {
  auto model = load_checkpoint(cfg.checkpoint_path(mode));
  if (model.config().input_dim != cfg.data.dim) {
    throw LoadError(LoadError::Kind::kShapeMismatch, "checkpoint input_dim " +
                                                         std::to_string(model.config().input_dim) +
                                                         " does not match data.dim " + std::to_string(cfg.data.dim));
  }
  return model;
}

json provenance(const ExperimentConfig& cfg) {
  return {{"config_digest", cfg.digest()}, {"seed", cfg.resolved_seed()}, {"artifact_version", kArtifactVersion}};
}

json report_json(const ExperimentConfig& cfg, const EvalOutcome& o) {
  json j = provenance(cfg);
  j["mode"] = std::string(to_string(o.mode));
  j["decision_mode"] = std::string(to_string(o.report.decision_mode));
  j["threshold"] = o.report.threshold;
  j["val_balanced_accuracy"] = o.selection.balanced_accuracy;
  j["acc_clean"] = o.report.acc_clean;
  j["acc_adv"] = o.report.acc_adv;
  j["acc_avg"] = o.report.acc_avg;
  j["auc"] = o.report.auc;
  j["success_rate"] = o.report.success_rate;
  j["n_clean"] = o.report.n_clean;
  j["n_adv"] = o.report.n_adv;
  return j;
}

std::string provenance_cells(const ExperimentConfig& cfg) {
  return cfg.digest() + "," + std::to_string(cfg.resolved_seed()) + "," + kArtifactVersion;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    body();
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const LoadError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return kExitIo;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitConfig;
}

SyntheticSplits run_gen_data(const ExperimentConfig& cfg) { return generate_synthetic(cfg.data); }

TrainResult run_train(const ExperimentConfig& cfg, TrainMode mode) {
  const auto train_set = load_split(cfg, "train");
  const auto val_set = load_split(cfg, "val");
  auto model = init_model(cfg.model);
  return train_mode(std::move(model), train_set, val_set, cfg.train, mode);
}

EvalOutcome run_eval(const ExperimentConfig& cfg, TrainMode mode) {
  const auto model = load_model_for(cfg, mode);
  const auto val_set = load_split(cfg, "val");
  const auto test_set = load_split(cfg, "test");
  EvalOutcome o;
  o.mode = mode;
  const DecisionMode dm = cfg.decision_mode.value_or(default_decision_mode(mode));
  o.selection = select_threshold(model, val_set, dm);
  o.report = evaluate(model, test_set, cfg.eval_attack, DecisionRule{dm, o.selection.threshold});
  return o;
}

SweepOutcome run_adaptive_sweep(const ExperimentConfig& cfg, TrainMode mode) {
  const auto* pgd = std::get_if<PgdConfig>(&cfg.eval_attack);
  if (!pgd) throw ConfigError("eval_attack", "the adaptive sweep needs a PGD attack");
  const auto model = load_model_for(cfg, mode);
  const auto val_set = load_split(cfg, "val");
  const auto test_set = load_split(cfg, "test");
  SweepOutcome o;
  o.base.mode = mode;
  const DecisionMode dm = cfg.decision_mode.value_or(default_decision_mode(mode));
  o.base.selection = select_threshold(model, val_set, dm);
  const DecisionRule rule{dm, o.base.selection.threshold};
  o.base.report = evaluate(model, test_set, cfg.eval_attack, rule);
  o.rows = adaptive_sweep(model, test_set, *pgd, cfg.eta_grid, rule);
  return o;
}

int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto splits = run_gen_data(cfg);
    const Dataset* sets[] = {&splits.train, &splits.val, &splits.test};
    const std::uint64_t seeds[] = {splits.train_seed, splits.val_seed, splits.test_seed};
    for (int i = 0; i < 3; ++i) {
      const auto base = cfg.data_path() / kSplitNames[i];
      save_dataset(*sets[i], base.string() + ".afds");
      SplitManifest m{kSplitNames[i],  sets[i]->size(), sets[i]->count(Label::kReal), sets[i]->count(Label::kSpoof),
                      sets[i]->dim,    seeds[i],        cfg.digest(),                 kArtifactVersion};
      detail::write_file(base.string() + ".manifest.txt", format_manifest(m));
      out << kSplitNames[i] << ": " << sets[i]->size() << " examples -> " << base.string() << ".afds\n";
    }
  });
}

int cmd_train(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto result = run_train(cfg, mode);
    save_checkpoint(result.model, cfg.checkpoint_path(mode), provenance_json(cfg, mode));
    std::ostringstream csv;
    csv << "config_digest,seed,artifact_version,mode,epoch,l_spoof,l_cor,l_cs,val_acc_clean,val_acc_adv\n";
    for (std::size_t e = 0; e < result.history.epochs.size(); ++e) {
      const auto& s = result.history.epochs[e];
      csv << provenance_cells(cfg) << ',' << to_string(mode) << ',' << e << ',' << fmt(s.l_spoof) << ','
          << fmt(s.l_cor) << ',' << fmt(s.l_cs) << ',' << fmt(s.val_acc_clean) << ',' << fmt(s.val_acc_adv) << '\n';
    }
    const auto hist_path = cfg.out_dir / ("history_" + std::string(to_string(mode)) + ".csv");
    detail::write_file(hist_path, csv.str());
    out << to_string(mode) << ": " << result.history.epochs.size() << " epochs, checkpoint "
        << cfg.checkpoint_path(mode).string() << ", history " << hist_path.string() << '\n';
  });
}

int cmd_eval(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto o = run_eval(cfg, mode);
    const auto j = report_json(cfg, o);
    const std::string stem = "eval_" + std::string(to_string(mode));
    detail::write_file(cfg.out_dir / (stem + ".json"), j.dump(2) + "\n");
    std::ostringstream csv;
    csv << "config_digest,seed,artifact_version,mode,decision_mode,threshold,acc_clean,acc_adv,acc_avg,auc,"
           "success_rate\n"
        << provenance_cells(cfg) << ',' << to_string(mode) << ',' << to_string(o.report.decision_mode) << ','
        << fmt(o.report.threshold) << ',' << fmt(o.report.acc_clean) << ',' << fmt(o.report.acc_adv) << ','
        << fmt(o.report.acc_avg) << ',' << fmt(o.report.auc) << ',' << fmt(o.report.success_rate) << '\n';
    detail::write_file(cfg.out_dir / (stem + ".csv"), csv.str());
    out << j.dump(2) << '\n';
  });
}

int cmd_verify_theory(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  bool passed = false;
  const int rc = guarded(err, [&] {
    const auto cert = theory::certify(cfg.theory.deltas, cfg.theory.f_step, cfg.theory.g_step,
                                      cfg.theory.lemma2_samples, cfg.resolved_seed());
    json j = provenance(cfg);
    j["f_grid_step"] = cert.f_grid_step;
    j["g_grid_step"] = cert.g_grid_step;
    j["lemma1"] = {{"checked", cert.lemma1.total_checked}, {"violations", cert.lemma1.violations}};
    j["theorem1"] = json::array();
    out << "lemma1: checked " << cert.lemma1.total_checked << ", violations " << cert.lemma1.violations << '\n';
    for (std::size_t i = 0; i < cert.deltas.size(); ++i) {
      const auto& r = cert.theorem1[i];
      j["theorem1"].push_back({{"delta", cert.deltas[i]},
                               {"f_threshold", theory::DeltaErrorSpec(cert.deltas[i]).corrector_threshold()},
                               {"checked", r.total_checked},
                               {"violations", r.violations}});
      out << "theorem1 delta=" << fmt(cert.deltas[i]) << ": checked " << r.total_checked << ", violations "
          << r.violations << '\n';
    }
    j["lemma2_gradient_form"] = {{"checked", cert.lemma2.total_checked}, {"violations", cert.lemma2.violations}};
    out << "lemma2 gradient form: checked " << cert.lemma2.total_checked << ", violations "
        << cert.lemma2.violations << '\n';
    j["passed"] = cert.passed();
    detail::write_file(cfg.out_dir / "theory.json", j.dump(2) + "\n");
    out << (cert.passed() ? "certified: 0 violations\n" : "FAILED: violations found\n");
    passed = cert.passed();
  });
  if (rc != kExitOk) return rc;
  return passed ? kExitOk : kExitNumeric;
}

int cmd_adaptive_sweep(const ExperimentConfig& cfg, TrainMode mode, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto o = run_adaptive_sweep(cfg, mode);
    std::ostringstream csv;
    csv << "config_digest,seed,artifact_version,mode,decision_mode,threshold,objective,eta,acc_adv,acc_avg\n";
    for (const auto& r : o.rows) {
      csv << provenance_cells(cfg) << ',' << to_string(mode) << ',' << to_string(o.base.report.decision_mode)
          << ',' << fmt(o.base.report.threshold) << ',' << to_string(r.objective) << ',' << fmt(r.eta) << ','
          << fmt(r.acc_adv) << ',' << fmt(r.acc_avg) << '\n';
    }
    const auto path = cfg.out_dir / ("sweep_" + std::string(to_string(mode)) + ".csv");
    detail::write_file(path, csv.str());
    out << csv.str();
  });
}

}  // namespace advfas
