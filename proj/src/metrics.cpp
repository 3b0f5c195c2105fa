#include "strokenet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "strokenet/errors.hpp"
#include "strokenet/model.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

std::string to_string(Experiment e) {
  return e == Experiment::dichotomised ? "dichotomised" : "individual";
}

Experiment parse_experiment(const std::string& text) {
  const std::string t = trim(text);
  if (t == "dichotomised" || t == "A") return Experiment::dichotomised;
  if (t == "individual" || t == "B") return Experiment::individual;
  throw ConfigError("unknown experiment '" + text + "' (expected dichotomised or individual)");
}

std::size_t num_classes_for(Experiment e) { return e == Experiment::dichotomised ? 2 : 7; }

int dichotomize(int mrs) {
  if (mrs < 0 || mrs > 6) throw ParameterError("mRS " + std::to_string(mrs) + " outside 0..6");
  return mrs <= 2 ? kGoodOutcome : kBadOutcome;
}

namespace {
void check_pair(std::span<const int> pred, std::span<const int> truth, const char* what) {
  if (pred.size() != truth.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  if (pred.empty()) throw ParameterError(std::string(what) + " of an empty prediction set");
}
}  // namespace

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  check_pair(pred, truth, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double f1_score(std::span<const int> pred, std::span<const int> truth, int positive_class) {
  check_pair(pred, truth, "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive_class;
    const bool t = truth[i] == positive_class;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double auc(std::span<const double> scores, std::span<const int> truth, int positive_class) {
  if (scores.size() != truth.size()) {
    throw ShapeError("auc: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(truth.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] == positive_class) {
        pos_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("auc needs both classes; got " + std::to_string(n_pos) +
                               " positive and " + std::to_string(n_neg) + " negative samples");
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double one_nearest_accuracy(std::span<const int> pred, std::span<const int> truth) {
  check_pair(pred, truth, "one_nearest_accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += std::abs(pred[i] - truth[i]) <= 1 ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t num_classes) {
  check_pair(pred, truth, "confusion_matrix");
  ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0 || static_cast<std::size_t>(pred[i]) >= num_classes ||
        static_cast<std::size_t>(truth[i]) >= num_classes) {
      throw IndexError("confusion_matrix label outside [0," + std::to_string(num_classes - 1) + "]");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

MetricsReport evaluate_predictions(const Tensor& probs, std::span<const int> truth, Experiment e) {
  const std::size_t c = num_classes_for(e);
  if (probs.rank() != 2 || probs.dim(1) != c || probs.dim(0) != truth.size()) {
    throw ShapeError("evaluate_predictions: probabilities " + shape_to_string(probs.shape()) +
                     " do not match " + std::to_string(truth.size()) + " labels x " +
                     std::to_string(c) + " classes");
  }
  const std::vector<int> pred = argmax_rows(probs);
  MetricsReport r;
  r.experiment = e;
  r.n_samples = truth.size();
  r.accuracy = accuracy(pred, truth);
  r.confusion = confusion_matrix(pred, truth, c);
  if (e == Experiment::dichotomised) {
    r.f1 = f1_score(pred, truth, kGoodOutcome);
    std::vector<double> good(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) good[i] = probs.data()[i * c + kGoodOutcome];
    r.auc = auc(good, truth, kGoodOutcome);
  } else {
    r.one_nearest = one_nearest_accuracy(pred, truth);
  }
  return r;
}

std::string format_report(const MetricsReport& r) {
  std::string out;
  for (const auto& [k, v] : r.context) out += k + "=" + v + "\n";
  out += "experiment=" + to_string(r.experiment) + "\n";
  out += "n_samples=" + std::to_string(r.n_samples) + "\n";
  out += "positive_class=" + r.positive_class + "\n";
  out += "accuracy=" + format_double(r.accuracy) + "\n";
  if (r.f1) out += "f1=" + format_double(*r.f1) + "\n";
  if (r.auc) out += "auc=" + format_double(*r.auc) + "\n";
  if (r.one_nearest) out += "one_nearest_accuracy=" + format_double(*r.one_nearest) + "\n";
  out += "[confusion_matrix]\n";
  for (const auto& row : r.confusion) {
    std::vector<std::size_t> cells(row.begin(), row.end());
    out += join_sizes(cells, ',') + "\n";
  }
  return out;
}

MetricsReport parse_report(const std::string& text) {
  MetricsReport r;
  bool in_matrix = false;
  bool saw_matrix = false;
  for (const auto& raw : split(text, '\n')) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[confusion_matrix]") {
      in_matrix = saw_matrix = true;
      continue;
    }
    if (in_matrix) {
      const auto cells = parse_sizes(line, ',');
      r.confusion.emplace_back(cells.begin(), cells.end());
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("report line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "experiment") r.experiment = parse_experiment(value);
    else if (key == "n_samples") r.n_samples = parse_size(value);
    else if (key == "positive_class") r.positive_class = value;
    else if (key == "accuracy") r.accuracy = parse_double(value);
    else if (key == "f1") r.f1 = parse_double(value);
    else if (key == "auc") r.auc = parse_double(value);
    else if (key == "one_nearest_accuracy") r.one_nearest = parse_double(value);
    else r.context.emplace_back(key, value);
  }
  if (!saw_matrix) throw ConfigError("report has no [confusion_matrix] section");
  return r;
}

}  // namespace strokenet
