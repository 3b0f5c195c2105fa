#include "strokenet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "strokenet/cohort.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/layers.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

void TrainConfig::validate(std::size_t num_classes) const {
  std::vector<std::string> problems;
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (max_epochs < 1) problems.push_back("max_epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) problems.push_back("momentum must be in [0,1)");
  if (!(lr_init >= 0.0) || !std::isfinite(lr_init)) problems.push_back("lr_init must be finite and >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) problems.push_back("gamma must be finite and >= 0");
  for (double a : alpha)
    if (!(a >= 0.0 && a <= 1.0)) {
      problems.push_back("every alpha must be in [0,1]");
      break;
    }
  if (num_classes != 0 && !alpha.empty() && alpha.size() != num_classes) {
    problems.push_back("alpha has " + std::to_string(alpha.size()) + " entries for " +
                       std::to_string(num_classes) + " classes");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
    problems.push_back("validation_fraction must be in (0,0.5)");
  }
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ConfigError(msg);
  }
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.max_epochs"] = std::to_string(max_epochs);
  kv["train.patience"] = std::to_string(patience);
  kv["train.momentum"] = format_double(momentum);
  kv["train.lr_init"] = format_double(lr_init);
  kv["train.gamma"] = format_double(gamma);
  kv["train.alpha"] = alpha.empty() ? "auto" : join_doubles(alpha, ',');
  kv["train.seed"] = std::to_string(seed);
  kv["train.validation_fraction"] = format_double(validation_fraction);
  kv["train.augment"] = augment ? "true" : "false";
  kv["train.aug.flip_x_probability"] = format_double(augmentation.flip_x_probability);
  kv["train.aug.flip_y_probability"] = format_double(augmentation.flip_y_probability);
  kv["train.aug.rotation_probability"] = format_double(augmentation.rotation_probability);
  kv["train.aug.max_rotation_degrees"] = format_double(augmentation.max_rotation_degrees);
  kv["train.aug.elastic_probability"] = format_double(augmentation.elastic_probability);
  kv["train.aug.elastic_sigma"] = format_double(augmentation.elastic_sigma);
  kv["train.aug.elastic_max_displacement"] = format_double(augmentation.elastic_max_displacement);
  kv["train.aug.noise_sigma"] = format_double(augmentation.noise_sigma);
  return kv;
}

std::vector<std::string> TrainConfig::apply_key_values(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> used;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(it->second);
    used.push_back(key);
  };
  auto real = [&](const std::string& key, double& field) {
    take(key, [&](const std::string& v) { field = parse_double(v); });
  };
  take("train.batch_size", [&](const std::string& v) { batch_size = parse_size(v); });
  take("train.max_epochs", [&](const std::string& v) { max_epochs = parse_size(v); });
  take("train.patience", [&](const std::string& v) { patience = parse_size(v); });
  real("train.momentum", momentum);
  real("train.lr_init", lr_init);
  real("train.gamma", gamma);
  take("train.alpha", [&](const std::string& v) {
    alpha = trim(v) == "auto" || trim(v).empty() ? std::vector<double>{} : parse_doubles(v, ',');
  });
  take("train.seed", [&](const std::string& v) { seed = parse_size(v); });
  real("train.validation_fraction", validation_fraction);
  take("train.augment", [&](const std::string& v) { augment = parse_bool(v); });
  real("train.aug.flip_x_probability", augmentation.flip_x_probability);
  real("train.aug.flip_y_probability", augmentation.flip_y_probability);
  real("train.aug.rotation_probability", augmentation.rotation_probability);
  real("train.aug.max_rotation_degrees", augmentation.max_rotation_degrees);
  real("train.aug.elastic_probability", augmentation.elastic_probability);
  real("train.aug.elastic_sigma", augmentation.elastic_sigma);
  real("train.aug.elastic_max_displacement", augmentation.elastic_max_displacement);
  real("train.aug.noise_sigma", augmentation.noise_sigma);
  return used;
}

FocalLossResult focal_loss(const Tensor& probs, std::span<const int> labels,
                           std::span<const double> alpha, double gamma) {
  if (probs.rank() != 2) throw ShapeError("focal_loss expects (N, C) probabilities, got " +
                                          shape_to_string(probs.shape()));
  const std::size_t n = probs.dim(0);
  const std::size_t c = probs.dim(1);
  if (labels.size() != n) {
    throw ShapeError("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (alpha.size() != c) {
    throw ShapeError("focal_loss: alpha has " + std::to_string(alpha.size()) + " entries for " +
                     std::to_string(c) + " classes");
  }
  if (!(gamma >= 0.0)) throw ParameterError("focal_loss gamma must be >= 0");
  if (n == 0) throw ParameterError("focal_loss needs at least one row");

  FocalLossResult out;
  out.grad_logits = Tensor::zeros({n, c});
  const auto p = probs.data();
  auto g = out.grad_logits.mutable_data();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("focal_loss label " + std::to_string(y) + " outside [0," +
                       std::to_string(c - 1) + "]");
    }
    double py = p[i * c + static_cast<std::size_t>(y)];
    if (py < kProbabilityFloor) {
      py = kProbabilityFloor;
      ++out.floor_events;
    }
    const double a = alpha[static_cast<std::size_t>(y)];
    const double q = 1.0 - py;
    const double log_p = std::log(py);
    const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    total += -a * mod * log_p;
    // d(loss_i)/d(logit_k) = a [gamma q^(gamma-1) p log p - q^gamma] (delta_yk - p_k)
    const double slope = (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0) * py * log_p;
    const double coef = a * (slope - mod) * inv_n;
    for (std::size_t k = 0; k < c; ++k) {
      const double delta = static_cast<std::size_t>(y) == k ? 1.0 : 0.0;
      g[i * c + k] = coef * (delta - p[i * c + k]);
    }
  }
  out.loss = total * inv_n;
  return out;
}

std::vector<double> default_alpha(std::span<const std::size_t> class_counts) {
  const double total = static_cast<double>(
      std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0}));
  if (total <= 0.0) throw ParameterError("default_alpha needs at least one non-zero class count");
  std::vector<double> alpha;
  alpha.reserve(class_counts.size());
  for (std::size_t count : class_counts) alpha.push_back(1.0 - static_cast<double>(count) / total);
  return alpha;
}

double cosine_lr(std::size_t epoch, const TrainConfig& config) {
  if (config.max_epochs == 0) throw ParameterError("cosine_lr needs max_epochs >= 1");
  if (epoch > config.max_epochs) {
    throw ParameterError("cosine_lr epoch " + std::to_string(epoch) + " outside [0," +
                         std::to_string(config.max_epochs) + "]");
  }
  if (epoch == config.max_epochs) return 0.0;
  const double t = static_cast<double>(epoch) / static_cast<double>(config.max_epochs);
  return 0.5 * config.lr_init * (1.0 + std::cos(std::numbers::pi * t));
}

OptimizerState make_optimizer_state(const ModelParams& params) {
  OptimizerState state;
  state.velocity = params.zeros_like();
  return state;
}

void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
              double momentum) {
  if (!params.same_layout(grads) || !params.same_layout(state.velocity)) {
    throw ShapeError("sgd_step: parameter, gradient and velocity layouts differ");
  }
  for (const auto& g : grads) {
    if (!g.value.all_finite()) {
      throw NumericalError("non-finite gradient in '" + g.name + "' at epoch " +
                           std::to_string(state.epoch) + "; training aborted");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params.entry(i).value.mutable_data();
    auto v = state.velocity.entry(i).value.mutable_data();
    const auto g = grads.entry(i).value.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      w[k] -= lr * v[k];
    }
  }
  state.lr = lr;
}

bool EarlyStopping::update(std::size_t epoch, double loss) {
  if (!seen_ || loss < best_loss_) {
    seen_ = true;
    best_loss_ = loss;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

std::string format_history(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_loss) + "," + format_double(r.lr) + "\n";
  }
  return out;
}

std::vector<HistoryRow> parse_history(const std::string& csv) {
  std::vector<HistoryRow> rows;
  bool header = true;
  for (const auto& raw : split(csv, '\n')) {
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (header) {
      if (line != "epoch,train_loss,val_loss,lr") throw ConfigError("history header mismatch: " + line);
      header = false;
      continue;
    }
    const auto cols = split(line, ',');
    if (cols.size() != 4) throw ConfigError("history row needs 4 columns: " + line);
    rows.push_back({parse_size(cols[0]), parse_double(cols[1]), parse_double(cols[2]),
                    parse_double(cols[3])});
  }
  return rows;
}

namespace {

struct Batch {
  Tensor images;
  Tensor meta;
  std::vector<int> labels;
};

Tensor stack_meta(const std::vector<const Tensor*>& rows) {
  const std::size_t v = rows.front()->dim(1);
  std::vector<double> data;
  data.reserve(rows.size() * v);
  for (const Tensor* r : rows) {
    if (r->rank() != 2 || r->dim(0) != 1 || r->dim(1) != v) {
      throw ShapeError("sample metadata must be (1, " + std::to_string(v) + "), got " +
                       shape_to_string(r->shape()));
    }
    data.insert(data.end(), r->data().begin(), r->data().end());
  }
  return Tensor({rows.size(), v}, std::move(data));
}

// Images: normalised tensors (1, D, H, W) per sample, or nothing for metadata-only.
Batch make_batch(const std::vector<Tensor>& images, const std::vector<const Tensor*>& meta,
                 std::vector<int> labels) {
  Batch b;
  if (!images.empty()) b.images = stack(images);
  b.meta = stack_meta(meta);
  b.labels = std::move(labels);
  return b;
}

std::vector<double> class_weights(const TrainConfig& cfg, const Dataset& data,
                                  const std::vector<std::size_t>& rows, std::size_t num_classes) {
  if (!cfg.alpha.empty()) return cfg.alpha;
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t r : rows) ++counts.at(static_cast<std::size_t>(data[r].label));
  return default_alpha(counts);
}

struct Evaluator {
  const Dataset& data;
  std::vector<std::size_t> rows;
  std::vector<Tensor> images;  // normalised once; identical every epoch
  bool use_image;

  Evaluator(const Dataset& d, std::vector<std::size_t> r, bool image)
      : data(d), rows(std::move(r)), use_image(image) {
    if (use_image) {
      images.reserve(rows.size());
      for (std::size_t i : rows) images.push_back(finish_volume(data[i].volume, false, {}, nullptr));
    }
  }

  Tensor probs(const ModelParams& params, const ModelConfig& cfg, std::size_t batch_size) const {
    Rng unused(0);
    std::vector<double> out;
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
      const std::size_t end = std::min(rows.size(), start + batch_size);
      std::vector<Tensor> imgs;
      std::vector<const Tensor*> meta;
      for (std::size_t k = start; k < end; ++k) {
        if (use_image) imgs.push_back(images[k]);
        meta.push_back(&data[rows[k]].meta);
      }
      Batch b = make_batch(imgs, meta, {});
      Tensor p = softmax(forward_logits(b.images, b.meta, params, cfg, false, unused));
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return Tensor({rows.size(), cfg.num_classes}, std::move(out));
  }

  std::vector<int> labels() const {
    std::vector<int> y;
    for (std::size_t i : rows) y.push_back(data[i].label);
    return y;
  }
};

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

Tensor infer_probs(const Dataset& data, const ModelParams& params, const ModelConfig& config,
                   std::size_t batch_size) {
  if (data.empty()) throw ConfigError("infer_probs: empty dataset");
  if (batch_size < 1) throw ParameterError("infer_probs batch_size must be >= 1");
  Evaluator ev(data, all_rows(data.size()), config.uses_image());
  return ev.probs(params, config, batch_size);
}

TrainResult train(const ModelParams& initial, const Dataset& data, const TrainConfig& tcfg,
                  const ModelConfig& mcfg, const EpochCallback& on_epoch) {
  mcfg.validate();
  tcfg.validate(mcfg.num_classes);
  if (data.empty()) throw ConfigError("training split is empty");
  for (const auto& s : data) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= mcfg.num_classes) {
      throw ConfigError("sample label " + std::to_string(s.label) + " outside [0," +
                        std::to_string(mcfg.num_classes - 1) + "]");
    }
  }

  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  const auto keep = stratified_selection(labels, 1.0 - tcfg.validation_fraction,
                                         derive_seed(tcfg.seed, 3));
  std::vector<std::size_t> train_rows, val_rows;
  for (std::size_t i = 0; i < data.size(); ++i) (keep[i] ? train_rows : val_rows).push_back(i);
  if (train_rows.empty() || val_rows.empty()) {
    throw ConfigError("validation carve-out of " + std::to_string(data.size()) +
                      " samples leaves an empty " + (train_rows.empty() ? "training" : "validation") +
                      " split");
  }

  TrainResult result;
  result.alpha = class_weights(tcfg, data, train_rows, mcfg.num_classes);
  result.train_size = train_rows.size();
  result.validation_size = val_rows.size();

  const bool use_image = mcfg.uses_image();
  Evaluator validation(data, val_rows, use_image);
  const std::vector<int> val_labels = validation.labels();

  ModelParams params = initial;
  result.best_params = params;
  OptimizerState state = make_optimizer_state(params);
  EarlyStopping stopper(tcfg.patience);
  std::vector<std::size_t> order = train_rows;

  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, tcfg);
    state.epoch = epoch;
    Rng shuffle_rng(derive_seed(tcfg.seed, 4, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      std::vector<Tensor> imgs;
      std::vector<const Tensor*> meta;
      std::vector<int> y;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = data[order[k]];
        if (use_image) {
          Rng aug_rng(derive_seed(derive_seed(tcfg.seed, 6, epoch), s.index));
          imgs.push_back(finish_volume(s.volume, tcfg.augment, tcfg.augmentation, &aug_rng));
        }
        meta.push_back(&s.meta);
        y.push_back(s.label);
      }
      Batch b = make_batch(imgs, meta, std::move(y));
      Rng dropout_rng(derive_seed(derive_seed(tcfg.seed, 5, epoch), batch_index));
      ForwardCache cache;
      Tensor logits = forward_logits(b.images, b.meta, params, mcfg, true, dropout_rng, &cache);
      Tensor probs = softmax(logits);
      FocalLossResult fl = focal_loss(probs, b.labels, result.alpha, tcfg.gamma);
      result.floor_events += fl.floor_events;
      loss_sum += fl.loss * static_cast<double>(end - start);
      ModelParams grads = params.zeros_like();
      backward_logits(cache, fl.grad_logits, params, mcfg, grads);
      sgd_step(params, grads, state, lr, tcfg.momentum);
    }

    Tensor val_probs = validation.probs(params, mcfg, tcfg.batch_size);
    FocalLossResult val = focal_loss(val_probs, val_labels, result.alpha, tcfg.gamma);
    if (!std::isfinite(val.loss)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    HistoryRow row{epoch, loss_sum / static_cast<double>(order.size()), val.loss, lr};
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);
    if (stopper.update(epoch, val.loss)) {
      result.best_params = params;
      result.best_epoch = epoch;
    }
    if (stopper.should_stop(epoch)) break;
  }
  return result;
}

}  // namespace strokenet
