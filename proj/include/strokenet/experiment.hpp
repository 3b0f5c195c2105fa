#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "strokenet/cohort.hpp"
#include "strokenet/metrics.hpp"
#include "strokenet/model.hpp"
#include "strokenet/preprocess.hpp"
#include "strokenet/text.hpp"
#include "strokenet/training.hpp"

namespace strokenet {

struct RunConfig {
  Experiment experiment = Experiment::dichotomised;
  ModelConfig model;  // mode and attention_enabled live here
  TrainConfig train;
  PreprocessConfig preprocess;
  std::filesystem::path cohort;  // directory holding manifest.csv, or the manifest itself
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;  // used only when the manifest carries no split tags

  // Derives C from the experiment, V from the mode, copies the seed into the training
  // config, then validates everything.
  void resolve();

  KeyValues to_key_values() const;
  // Unknown keys raise ConfigError. Accepts "mode" and "attention_enabled" as
  // shorthands for the model.* keys.
  void apply_key_values(const KeyValues& kv);
};

KeyValues preprocess_key_values(const PreprocessConfig& config);
std::vector<std::string> apply_preprocess_key_values(PreprocessConfig& config, const KeyValues& kv);

// Volumes by record index. Empty = read from disk relative to the manifest directory.
struct CohortSource {
  CohortManifest manifest;
  std::filesystem::path base_dir;
  std::span<const Volume> volumes;

  const Volume* in_memory(std::size_t record) const {
    return volumes.empty() ? nullptr : &volumes[record];
  }
};

CohortSource open_cohort(const std::filesystem::path& cohort);

// Preprocessed samples of every record tagged `tag`, labelled for the experiment.
// The manifest statistics must already be fitted.
Dataset build_dataset(const CohortSource& source, SplitTag tag, const RunConfig& config);

struct ExperimentResult {
  MetricsReport report;
  TrainResult training;
  std::size_t parameter_count = 0;
  RunConfig resolved;
};

// Split (if untagged), fit statistics on the train rows, train, evaluate on the test
// rows. When output_dir is set, writes config.txt, history.csv, checkpoint.stkf and
// report.txt there. Errors keep their type and gain the run context in the message.
ExperimentResult run_experiment(const RunConfig& config, const EpochCallback& on_epoch = {});
ExperimentResult run_experiment(const RunConfig& config, CohortSource source,
                                const EpochCallback& on_epoch = {});

// Evaluates stored parameters on the test rows of `source`.
MetricsReport evaluate_checkpoint(const ModelParams& params, const RunConfig& config,
                                  CohortSource source);

struct CohortPredictions {
  std::vector<std::string> ids;
  std::vector<SplitTag> splits;
  std::vector<int> labels;  // in the experiment's label space
  Tensor probs;             // (N, C)
  std::vector<int> predicted;
};

// Class probabilities for the test rows, or for every row when include_train is set.
CohortPredictions predict_cohort(const ModelParams& params, const RunConfig& config,
                                 CohortSource source, bool include_train = false);
std::string format_predictions(const CohortPredictions& predictions);

}  // namespace strokenet
