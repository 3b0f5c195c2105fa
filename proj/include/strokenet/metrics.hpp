#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strokenet/tensor.hpp"

namespace strokenet {

enum class Experiment { dichotomised, individual };
std::string to_string(Experiment e);
Experiment parse_experiment(const std::string& text);
std::size_t num_classes_for(Experiment e);

inline constexpr int kGoodOutcome = 0;
inline constexpr int kBadOutcome = 1;
inline const std::string kPositiveClassTag = "good_outcome_mrs_0_2";

// 0 (good) for mRS 0-2, 1 (bad) for mRS 3-6.
int dichotomize(int mrs);

double accuracy(std::span<const int> pred, std::span<const int> truth);
// F1 of `positive_class`; 0 when precision + recall is 0.
double f1_score(std::span<const int> pred, std::span<const int> truth, int positive_class = kGoodOutcome);
// Rank-based AUC: P(score_pos > score_neg) + 0.5 P(tie). Rows with truth == positive_class
// are positives. Throws UndefinedMetricError when either class is absent.
double auc(std::span<const double> scores, std::span<const int> truth, int positive_class = kGoodOutcome);
// Fraction with |pred - truth| <= 1.
double one_nearest_accuracy(std::span<const int> pred, std::span<const int> truth);

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [truth][pred]
ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t num_classes);

struct MetricsReport {
  Experiment experiment = Experiment::dichotomised;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  std::optional<double> f1;            // dichotomised only
  std::optional<double> auc;           // dichotomised only
  std::optional<double> one_nearest;   // individual only
  ConfusionMatrix confusion;
  std::string positive_class = kPositiveClassTag;
  // Free-form run context (mode, attention, parameter count, ...), written before the metrics.
  std::vector<std::pair<std::string, std::string>> context;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Metrics for (N, C) class probabilities against labels in the experiment's label space.
MetricsReport evaluate_predictions(const Tensor& probs, std::span<const int> truth, Experiment e);

// key=value lines, then "[confusion_matrix]" and one CSV row per true class.
std::string format_report(const MetricsReport& report);
MetricsReport parse_report(const std::string& text);

}  // namespace strokenet
