// strokenet command-line front end: synth, preprocess, train, eval, predict, report.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "strokenet/checkpoint.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/experiment.hpp"
#include "strokenet/synthetic.hpp"
#include "strokenet/volume.hpp"

namespace fs = std::filesystem;
using namespace strokenet;

namespace {

// Settings shared by every subcommand: a key=value file plus --set overrides.
struct ConfigInput {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one config key (KEY=VALUE), repeatable");
  }

  // File first, then --set, then the dedicated flags in `flags`.
  KeyValues resolve(const KeyValues& flags) const {
    KeyValues kv;
    if (!file.empty()) kv = read_key_value_file(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) kv[k] = v;
    return kv;
  }
};

template <class T>
void put(KeyValues& kv, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) kv[key] = *v;
  else if constexpr (std::is_same_v<T, bool>) kv[key] = *v ? "true" : "false";
  else if constexpr (std::is_floating_point_v<T>) kv[key] = format_double(*v);
  else kv[key] = std::to_string(*v);
}

void print_history_row(const HistoryRow& r) {
  std::cerr << "epoch " << r.epoch << " train_loss=" << format_double(r.train_loss)
            << " val_loss=" << format_double(r.val_loss) << " lr=" << format_double(r.lr) << "\n";
}

// ---- synth ----

struct SynthArgs {
  ConfigInput config;
  std::string out;
  std::optional<std::size_t> n;
  std::optional<std::string> signal;
  std::optional<std::size_t> seed;
  std::optional<std::string> dims;
};

int run_synth(const SynthArgs& a) {
  KeyValues flags;
  put(flags, "synth.n", a.n);
  put(flags, "synth.signal", a.signal);
  put(flags, "synth.seed", a.seed);
  put(flags, "synth.dims", a.dims);
  KeyValues kv = a.config.resolve(flags);

  SyntheticSpec spec;
  std::size_t n = 500;
  std::uint64_t seed = 1;
  std::vector<std::string> used = spec.apply_key_values(kv);
  for (const auto& [k, v] : kv) {
    if (std::find(used.begin(), used.end(), k) != used.end()) continue;
    if (k == "synth.n") n = parse_size(v);
    else if (k == "synth.seed") seed = parse_size(v);
    else throw ConfigError("unknown synth key '" + k + "'");
  }
  SyntheticCohort cohort = generate_synthetic_cohort(n, spec, seed);
  write_cohort(cohort, a.out);

  KeyValues resolved = spec.to_key_values();
  resolved["synth.n"] = std::to_string(n);
  resolved["synth.seed"] = std::to_string(seed);
  write_text_file(fs::path(a.out) / "synth_config.txt", format_key_values(resolved));
  std::cout << "wrote " << n << " patients to " << a.out << "\n";
  return 0;
}

// ---- preprocess ----

struct PreprocessArgs {
  ConfigInput config;
  std::string cohort;
  std::string out;
};

int run_preprocess(const PreprocessArgs& a) {
  KeyValues kv = a.config.resolve({});
  PreprocessConfig pc;
  std::vector<std::string> used = apply_preprocess_key_values(pc, kv);
  for (const auto& [k, v] : kv) {
    if (std::find(used.begin(), used.end(), k) == used.end()) {
      throw ConfigError("unknown preprocess key '" + k + "'");
    }
  }
  CohortSource src = open_cohort(a.cohort);
  const fs::path out = a.out;
  fs::create_directories(out);
  for (const auto& r : src.manifest.records) {
    fs::path in = r.volume_path;
    if (in.is_relative()) in = src.base_dir / in;
    Volume v = prepare_volume(read_volume(in), pc);
    quantize_to_float(v);
    const fs::path dst = out / r.volume_path;
    fs::create_directories(dst.parent_path());
    write_volume(v, dst);
  }
  write_manifest(src.manifest, out / "manifest.csv");
  write_text_file(out / "preprocess_config.txt", format_key_values(preprocess_key_values(pc)));
  std::cout << "prepared " << src.manifest.records.size() << " volumes into " << a.out << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  ConfigInput config;
  std::optional<std::string> cohort, out, mode, experiment;
  std::optional<std::size_t> seed, epochs;
  std::optional<double> lr;
  std::optional<bool> attention;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  KeyValues flags;
  put(flags, "cohort", a.cohort);
  put(flags, "output_dir", a.out);
  put(flags, "model.mode", a.mode);
  put(flags, "experiment", a.experiment);
  put(flags, "seed", a.seed);
  put(flags, "train.max_epochs", a.epochs);
  put(flags, "train.lr_init", a.lr);
  put(flags, "model.attention_enabled", a.attention);
  RunConfig rc;
  rc.apply_key_values(a.config.resolve(flags));
  if (rc.output_dir.empty()) throw ConfigError("train needs an output directory (--out or output_dir)");
  ExperimentResult res = run_experiment(rc, a.quiet ? EpochCallback{} : EpochCallback{print_history_row});
  std::cout << format_report(res.report);
  return 0;
}

// ---- eval / predict ----

struct CheckpointArgs {
  ConfigInput config;
  std::string checkpoint;
  std::optional<std::string> cohort;
  std::string out;
  bool all = false;
};

RunConfig config_from_checkpoint(const Checkpoint& ck, const CheckpointArgs& a) {
  KeyValues flags;
  put(flags, "cohort", a.cohort);
  KeyValues kv = ck.extra;
  for (const auto& [k, v] : a.config.resolve(flags)) kv[k] = v;
  RunConfig rc;
  rc.model = ck.config;
  rc.apply_key_values(kv);
  rc.output_dir = a.out;
  return rc;
}

int run_eval(const CheckpointArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig rc = config_from_checkpoint(ck, a);
  MetricsReport report = evaluate_checkpoint(ck.params, rc, open_cohort(rc.cohort));
  fs::create_directories(a.out);
  RunConfig resolved = rc;
  resolved.resolve();
  write_text_file(fs::path(a.out) / "config.txt", format_key_values(resolved.to_key_values()));
  write_text_file(fs::path(a.out) / "report.txt", format_report(report));
  std::cout << format_report(report);
  return 0;
}

int run_predict(const CheckpointArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig rc = config_from_checkpoint(ck, a);
  CohortPredictions p = predict_cohort(ck.params, rc, open_cohort(rc.cohort), a.all);
  fs::create_directories(a.out);
  RunConfig resolved = rc;
  resolved.resolve();
  write_text_file(fs::path(a.out) / "config.txt", format_key_values(resolved.to_key_values()));
  write_text_file(fs::path(a.out) / "predictions.csv", format_predictions(p));
  std::cout << "wrote " << p.ids.size() << " predictions to " << (fs::path(a.out) / "predictions.csv").string()
            << "\n";
  return 0;
}

// ---- report ----

std::string context_value(const MetricsReport& r, const std::string& key) {
  for (const auto& [k, v] : r.context)
    if (k == key) return v;
  return "";
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

int run_report(const std::vector<std::string>& runs) {
  std::cout << "run,experiment,mode,attention_enabled,parameter_count,n_samples,accuracy,f1,auc,"
               "one_nearest_accuracy\n";
  for (const auto& run : runs) {
    fs::path p = run;
    if (fs::is_directory(p)) p /= "report.txt";
    const MetricsReport r = parse_report(read_text_file(p));
    std::cout << run << "," << to_string(r.experiment) << "," << context_value(r, "mode") << ","
              << context_value(r, "attention_enabled") << "," << context_value(r, "parameter_count") << ","
              << r.n_samples << "," << format_double(r.accuracy) << "," << optional_cell(r.f1) << ","
              << optional_cell(r.auc) << "," << optional_cell(r.one_nearest) << "\n";
  }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const CorruptFileError*>(&e)) return 3;
  if (dynamic_cast<const CheckpointMismatchError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D CT + clinical metadata outcome prediction"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic cohort with a planted signal");
  synth.config.attach(s);
  s->add_option("-o,--out", synth.out, "output cohort directory")->required();
  s->add_option("-n,--n", synth.n, "number of patients (must match the class counts)");
  s->add_option("--signal", synth.signal, "none, image, metadata or split");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--dims", synth.dims, "volume size D,H,W");

  PreprocessArgs prep;
  auto* p = app.add_subcommand("preprocess", "resample, clip and crop/pad every volume of a cohort");
  prep.config.attach(p);
  p->add_option("--cohort", prep.cohort, "cohort directory or manifest")->required();
  p->add_option("-o,--out", prep.out, "output cohort directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model and evaluate it on the test split");
  tr.config.attach(t);
  t->add_option("--cohort", tr.cohort, "cohort directory or manifest");
  t->add_option("-o,--out", tr.out, "run output directory");
  t->add_option("--mode", tr.mode, "image_only, metadata_only or multimodal");
  t->add_option("--experiment", tr.experiment, "dichotomised or individual");
  t->add_option("--seed", tr.seed, "run seed");
  t->add_option("--epochs", tr.epochs, "maximum epochs");
  t->add_option("--lr", tr.lr, "initial learning rate");
  t->add_option("--attention", tr.attention, "enable cSE/sSE attention (true/false)");
  t->add_flag("-q,--quiet", tr.quiet, "no per-epoch progress");

  CheckpointArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev.config.attach(e);
  e->add_option("--checkpoint", ev.checkpoint, "STKF checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--cohort", ev.cohort, "cohort (defaults to the one stored in the checkpoint)");
  e->add_option("-o,--out", ev.out, "output directory for report.txt and config.txt")->required();

  CheckpointArgs pr;
  auto* d = app.add_subcommand("predict", "write per-patient class probabilities");
  pr.config.attach(d);
  d->add_option("--checkpoint", pr.checkpoint, "STKF checkpoint")->required()->check(CLI::ExistingFile);
  d->add_option("--cohort", pr.cohort, "cohort (defaults to the one stored in the checkpoint)");
  d->add_option("-o,--out", pr.out, "output directory for predictions.csv and config.txt")->required();
  d->add_flag("--all", pr.all, "include training rows");

  std::vector<std::string> runs;
  auto* r = app.add_subcommand("report", "tabulate one or more run reports as CSV");
  r->add_option("runs", runs, "run directories or report files")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return run_synth(synth);
    if (p->parsed()) return run_preprocess(prep);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_eval(ev);
    if (d->parsed()) return run_predict(pr);
    if (r->parsed()) return run_report(runs);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return 0;
}
