#include "strokenet/experiment.hpp"

#include <algorithm>
#include <iterator>
#include <set>

#include "strokenet/checkpoint.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/volume.hpp"

namespace strokenet {

KeyValues preprocess_key_values(const PreprocessConfig& c) {
  KeyValues kv;
  kv["preprocess.target_spacing"] = join_doubles({c.target_spacing.begin(), c.target_spacing.end()}, ',');
  kv["preprocess.hu_low"] = format_double(c.hu_low);
  kv["preprocess.hu_high"] = format_double(c.hu_high);
  kv["preprocess.target_dims"] = join_sizes({c.target_dims.begin(), c.target_dims.end()}, ',');
  kv["preprocess.fill_value"] = format_double(c.fill_value);
  return kv;
}

std::vector<std::string> apply_preprocess_key_values(PreprocessConfig& c, const KeyValues& kv) {
  std::vector<std::string> used;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(it->second);
    used.push_back(key);
  };
  take("preprocess.target_spacing", [&](const std::string& v) {
    auto parts = parse_doubles(v, ',');
    if (parts.size() != 3) throw ConfigError("preprocess.target_spacing needs 3 values (sz,sy,sx)");
    std::copy(parts.begin(), parts.end(), c.target_spacing.begin());
  });
  take("preprocess.hu_low", [&](const std::string& v) { c.hu_low = parse_double(v); });
  take("preprocess.hu_high", [&](const std::string& v) { c.hu_high = parse_double(v); });
  take("preprocess.target_dims", [&](const std::string& v) {
    auto parts = parse_sizes(v, ',');
    if (parts.size() != 3) throw ConfigError("preprocess.target_dims needs 3 values (D,H,W)");
    std::copy(parts.begin(), parts.end(), c.target_dims.begin());
  });
  take("preprocess.fill_value", [&](const std::string& v) { c.fill_value = parse_double(v); });
  return used;
}

void RunConfig::resolve() {
  model.num_classes = num_classes_for(experiment);
  model.metadata_dim = model.mode == Mode::image_only ? 2 : kClinicalWidth;
  train.seed = seed;
  model.validate();
  train.validate(model.num_classes);
  std::vector<std::string> problems;
  for (double s : preprocess.target_spacing)
    if (!(s > 0.0)) problems.push_back("preprocess.target_spacing must be positive");
  for (std::size_t d : preprocess.target_dims)
    if (d < 1) problems.push_back("preprocess.target_dims must be >= 1");
  if (!(preprocess.hu_low < preprocess.hu_high)) problems.push_back("preprocess.hu_low must be < hu_high");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) problems.push_back("train_fraction must be in (0,1)");
  if (!problems.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ConfigError(msg);
  }
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  for (const auto& [k, v] : train.to_key_values()) kv[k] = v;
  for (const auto& [k, v] : preprocess_key_values(preprocess)) kv[k] = v;
  kv["experiment"] = to_string(experiment);
  kv["cohort"] = cohort.string();
  kv["output_dir"] = output_dir.string();
  kv["seed"] = std::to_string(seed);
  kv["train_fraction"] = format_double(train_fraction);
  kv.erase("train.seed");
  return kv;
}

void RunConfig::apply_key_values(const KeyValues& input) {
  KeyValues kv = input;
  if (auto it = kv.find("mode"); it != kv.end()) {
    kv["model.mode"] = it->second;
    kv.erase(it);
  }
  if (auto it = kv.find("attention_enabled"); it != kv.end()) {
    kv["model.attention_enabled"] = it->second;
    kv.erase(it);
  }
  std::set<std::string> used;
  for (const auto& k : model.apply_key_values(kv)) used.insert(k);
  for (const auto& k : train.apply_key_values(kv)) used.insert(k);
  for (const auto& k : apply_preprocess_key_values(preprocess, kv)) used.insert(k);
  for (const auto& [key, value] : kv) {
    if (used.count(key)) continue;
    if (key == "experiment") experiment = parse_experiment(value);
    else if (key == "cohort") cohort = value;
    else if (key == "output_dir") output_dir = value;
    else if (key == "seed") seed = parse_size(value);
    else if (key == "train_fraction") train_fraction = parse_double(value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (kv.count("train.seed") && !kv.count("seed")) seed = train.seed;
}

CohortSource open_cohort(const std::filesystem::path& cohort) {
  if (cohort.empty()) throw ConfigError("no cohort path given");
  std::filesystem::path manifest = cohort;
  if (std::filesystem::is_directory(cohort)) manifest = cohort / "manifest.csv";
  if (!std::filesystem::exists(manifest)) {
    throw IoError("manifest not found: " + manifest.string());
  }
  CohortSource src;
  src.manifest = read_manifest(manifest);
  src.base_dir = manifest.parent_path();
  return src;
}

Dataset build_dataset(const CohortSource& source, SplitTag tag, const RunConfig& config) {
  const CohortManifest& m = source.manifest;
  Dataset out;
  EncodeDiagnostics diag;
  for (std::size_t i : m.indices(tag)) {
    const PatientRecord& r = m.records[i];
    Sample s;
    s.index = i;
    s.label = config.experiment == Experiment::dichotomised ? dichotomize(r.mrs) : r.mrs;
    s.meta = encode_metadata(r, m, config.model.mode, &diag);
    if (config.model.uses_image()) {
      PipelineTrace trace;
      if (const Volume* v = source.in_memory(i)) {
        s.volume = prepare_volume(*v, config.preprocess, &trace);
      } else {
        std::filesystem::path p = r.volume_path;
        if (p.is_relative()) p = source.base_dir / p;
        s.volume = prepare_volume(read_volume(p), config.preprocess, &trace);
      }
    } else {
      s.volume.voxels.clear();
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

template <class E>
[[noreturn]] void rethrow_with(const std::string& context, const E& e) {
  throw E(context + ": " + e.what());
}

template <class F>
auto with_context(const std::string& context, F&& fn) {
  try {
    return fn();
  } catch (const CorruptFileError&) {
    throw;
  } catch (const ShapeError& e) {
    rethrow_with(context, e);
  } catch (const IndexError& e) {
    rethrow_with(context, e);
  } catch (const ParameterError& e) {
    rethrow_with(context, e);
  } catch (const ConfigError& e) {
    rethrow_with(context, e);
  } catch (const DegenerateInputError& e) {
    rethrow_with(context, e);
  } catch (const UndefinedMetricError& e) {
    rethrow_with(context, e);
  } catch (const NumericalError& e) {
    rethrow_with(context, e);
  } catch (const IoError& e) {
    rethrow_with(context, e);
  } catch (const CheckpointMismatchError& e) {
    rethrow_with(context, e);
  }
}

std::string run_context(const RunConfig& c) {
  return "run [" + to_string(c.experiment) + ", " + to_string(c.model.mode) + ", attention=" +
         (c.model.attention_enabled ? "on" : "off") + ", seed=" + std::to_string(c.seed) + "]";
}

void prepare_split(CohortSource& source, const RunConfig& config) {
  CohortManifest& m = source.manifest;
  bool untagged = false;
  for (const auto& r : m.records) untagged = untagged || r.split == SplitTag::none;
  if (untagged) split_cohort(m, config.train_fraction, derive_seed(config.seed, 8));
  if (m.indices(SplitTag::train).empty()) throw ConfigError("cohort has no training rows");
  if (m.indices(SplitTag::test).empty()) throw ConfigError("cohort has no test rows");
  if (config.model.mode != Mode::image_only) m.fit_statistics();
}

std::vector<int> labels_of(const Dataset& d) {
  std::vector<int> y;
  for (const auto& s : d) y.push_back(s.label);
  return y;
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& config, const EpochCallback& on_epoch) {
  RunConfig resolved = config;
  resolved.resolve();
  return with_context(run_context(resolved), [&] {
    return run_experiment(resolved, open_cohort(resolved.cohort), on_epoch);
  });
}

ExperimentResult run_experiment(const RunConfig& config, CohortSource source,
                                const EpochCallback& on_epoch) {
  RunConfig resolved = config;
  resolved.resolve();
  return with_context(run_context(resolved), [&] {
    ExperimentResult result;
    result.resolved = resolved;
    prepare_split(source, resolved);
    if (!resolved.output_dir.empty()) {
      write_text_file(resolved.output_dir / "config.txt",
                      format_key_values(resolved.to_key_values()));
    }
    const Dataset train_set = build_dataset(source, SplitTag::train, resolved);
    const Dataset test_set = build_dataset(source, SplitTag::test, resolved);

    Rng init_rng(derive_seed(resolved.seed, 7));
    const ModelParams initial = build_model(resolved.model, init_rng);
    result.parameter_count = initial.scalar_count();
    result.training = train(initial, train_set, resolved.train, resolved.model, on_epoch);

    const Tensor probs = infer_probs(test_set, result.training.best_params, resolved.model,
                                     resolved.train.batch_size);
    result.report = evaluate_predictions(probs, labels_of(test_set), resolved.experiment);
    result.report.context = {
        {"mode", to_string(resolved.model.mode)},
        {"attention_enabled", resolved.model.attention_enabled ? "true" : "false"},
        {"parameter_count", std::to_string(result.parameter_count)},
        {"seed", std::to_string(resolved.seed)},
        {"train_samples", std::to_string(result.training.train_size)},
        {"validation_samples", std::to_string(result.training.validation_size)},
        {"epochs_run", std::to_string(result.training.history.size())},
        {"best_epoch", std::to_string(result.training.best_epoch)},
        {"numerical_floor_events", std::to_string(result.training.floor_events)},
    };

    if (!resolved.output_dir.empty()) {
      KeyValues extra = resolved.to_key_values();
      extra.erase("output_dir");
      for (auto it = extra.begin(); it != extra.end();) {
        it = it->first.rfind("model.", 0) == 0 ? extra.erase(it) : std::next(it);
      }
      save_checkpoint(result.training.best_params, resolved.model,
                      resolved.output_dir / "checkpoint.stkf", extra);
      write_text_file(resolved.output_dir / "history.csv", format_history(result.training.history));
      write_text_file(resolved.output_dir / "report.txt", format_report(result.report));
    }
    return result;
  });
}

MetricsReport evaluate_checkpoint(const ModelParams& params, const RunConfig& config,
                                  CohortSource source) {
  RunConfig resolved = config;
  resolved.resolve();
  return with_context(run_context(resolved), [&] {
    check_layout(params, resolved.model);
    prepare_split(source, resolved);
    const Dataset test_set = build_dataset(source, SplitTag::test, resolved);
    const Tensor probs = infer_probs(test_set, params, resolved.model, resolved.train.batch_size);
    MetricsReport report = evaluate_predictions(probs, labels_of(test_set), resolved.experiment);
    report.context = {
        {"mode", to_string(resolved.model.mode)},
        {"attention_enabled", resolved.model.attention_enabled ? "true" : "false"},
        {"parameter_count", std::to_string(params.scalar_count())},
        {"seed", std::to_string(resolved.seed)},
    };
    return report;
  });
}

CohortPredictions predict_cohort(const ModelParams& params, const RunConfig& config,
                                 CohortSource source, bool include_train) {
  RunConfig resolved = config;
  resolved.resolve();
  return with_context(run_context(resolved), [&] {
    check_layout(params, resolved.model);
    prepare_split(source, resolved);
    Dataset data;
    if (include_train) data = build_dataset(source, SplitTag::train, resolved);
    Dataset test_set = build_dataset(source, SplitTag::test, resolved);
    std::move(test_set.begin(), test_set.end(), std::back_inserter(data));
    std::sort(data.begin(), data.end(), [](const Sample& a, const Sample& b) { return a.index < b.index; });

    CohortPredictions out;
    out.probs = infer_probs(data, params, resolved.model, resolved.train.batch_size);
    out.predicted = argmax_rows(out.probs);
    for (const Sample& s : data) {
      const PatientRecord& r = source.manifest.records[s.index];
      out.ids.push_back(r.id);
      out.splits.push_back(r.split);
      out.labels.push_back(s.label);
    }
    return out;
  });
}

std::string format_predictions(const CohortPredictions& p) {
  const std::size_t c = p.ids.empty() ? 0 : p.probs.shape()[1];
  std::string out = "id,split,label,predicted";
  for (std::size_t k = 0; k < c; ++k) out += ",p" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    out += p.ids[i] + "," + to_string(p.splits[i]) + "," + std::to_string(p.labels[i]) + "," +
           std::to_string(p.predicted[i]);
    for (std::size_t k = 0; k < c; ++k) out += "," + format_double(p.probs[i * c + k]);
    out += "\n";
  }
  return out;
}

}  // namespace strokenet
