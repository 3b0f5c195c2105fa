#include "strokenet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>

#include "strokenet/errors.hpp"
#include "strokenet/layers.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

std::string to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::none: return "none";
    case SignalKind::image: return "image";
    case SignalKind::metadata: return "metadata";
    case SignalKind::split: return "split";
  }
  return "none";
}

SignalKind parse_signal_kind(const std::string& text) {
  const std::string t = trim(text);
  if (t == "none") return SignalKind::none;
  if (t == "image") return SignalKind::image;
  if (t == "metadata") return SignalKind::metadata;
  if (t == "split") return SignalKind::split;
  throw ConfigError("unknown signal kind '" + text + "' (expected none, image, metadata or split)");
}

void SyntheticSpec::validate() const {
  std::vector<std::string> problems;
  if (dims[0] < 1 || dims[1] < 8 || dims[2] < 8) problems.push_back("dims must be at least 1x8x8");
  for (double s : spacing)
    if (!(s > 0.0)) problems.push_back("spacing must be positive");
  if (!(lesion_radius[0] > 0.0 && lesion_radius[1] >= lesion_radius[0])) {
    problems.push_back("lesion_radius must satisfy 0 < min <= max");
  }
  if (!(tissue_noise_sd >= 0.0)) problems.push_back("tissue_noise_sd must be >= 0");
  if (!(lesion_contrast[0] >= 0.0 && lesion_contrast[1] >= lesion_contrast[0])) {
    problems.push_back("lesion_contrast must satisfy 0 <= min <= max");
  }
  if (!(residual_sd >= 0.0)) problems.push_back("residual_sd must be >= 0");
  if (!(metadata_effect >= 0.0 && metadata_effect < 1.0)) problems.push_back("metadata_effect must be in [0,1)");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) problems.push_back("label_noise must be in [0,1]");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) problems.push_back("missing_rate must be in [0,1)");
  if (!(treatment_interaction >= 0.0)) problems.push_back("treatment_interaction must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) problems.push_back("train_fraction must be in (0,1)");
  if (continuous_fields < 4 || continuous_fields > 12) problems.push_back("continuous_fields must be in [4,12]");
  if (categorical_fields > 8) problems.push_back("categorical_fields must be at most 8");
  if (!problems.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ParameterError(msg);
  }
}

KeyValues SyntheticSpec::to_key_values() const {
  KeyValues kv;
  kv["synth.signal"] = to_string(signal);
  kv["synth.class_counts"] = join_sizes({class_counts.begin(), class_counts.end()}, ',');
  kv["synth.dims"] = join_sizes({dims.begin(), dims.end()}, ',');
  kv["synth.spacing"] = join_doubles({spacing.begin(), spacing.end()}, ',');
  kv["synth.residual_sd"] = format_double(residual_sd);
  kv["synth.metadata_effect"] = format_double(metadata_effect);
  kv["synth.lesion_radius"] = join_doubles({lesion_radius.begin(), lesion_radius.end()}, ',');
  kv["synth.lesion_contrast"] = join_doubles({lesion_contrast.begin(), lesion_contrast.end()}, ',');
  kv["synth.hyperdense"] = hyperdense ? "true" : "false";
  kv["synth.tissue_noise_sd"] = format_double(tissue_noise_sd);
  kv["synth.label_noise"] = format_double(label_noise);
  kv["synth.missing_rate"] = format_double(missing_rate);
  kv["synth.treatment_interaction"] = format_double(treatment_interaction);
  kv["synth.train_fraction"] = format_double(train_fraction);
  kv["synth.continuous_fields"] = std::to_string(continuous_fields);
  kv["synth.categorical_fields"] = std::to_string(categorical_fields);
  return kv;
}

std::vector<std::string> SyntheticSpec::apply_key_values(const KeyValues& kv) {
  std::vector<std::string> used;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(it->second);
    used.push_back(key);
  };
  auto fixed = [](const std::string& key, auto parsed, auto& dst) {
    if (parsed.size() != dst.size()) {
      throw ConfigError(key + " needs " + std::to_string(dst.size()) + " comma-separated values");
    }
    std::copy(parsed.begin(), parsed.end(), dst.begin());
  };
  take("synth.signal", [&](const std::string& v) { signal = parse_signal_kind(v); });
  take("synth.class_counts", [&](const std::string& v) { fixed("synth.class_counts", parse_sizes(v, ','), class_counts); });
  take("synth.dims", [&](const std::string& v) { fixed("synth.dims", parse_sizes(v, ','), dims); });
  take("synth.spacing", [&](const std::string& v) { fixed("synth.spacing", parse_doubles(v, ','), spacing); });
  take("synth.residual_sd", [&](const std::string& v) { residual_sd = parse_double(v); });
  take("synth.metadata_effect", [&](const std::string& v) { metadata_effect = parse_double(v); });
  take("synth.lesion_radius", [&](const std::string& v) { fixed("synth.lesion_radius", parse_doubles(v, ','), lesion_radius); });
  take("synth.lesion_contrast", [&](const std::string& v) { fixed("synth.lesion_contrast", parse_doubles(v, ','), lesion_contrast); });
  take("synth.hyperdense", [&](const std::string& v) { hyperdense = parse_bool(v); });
  take("synth.tissue_noise_sd", [&](const std::string& v) { tissue_noise_sd = parse_double(v); });
  take("synth.label_noise", [&](const std::string& v) { label_noise = parse_double(v); });
  take("synth.missing_rate", [&](const std::string& v) { missing_rate = parse_double(v); });
  take("synth.treatment_interaction", [&](const std::string& v) { treatment_interaction = parse_double(v); });
  take("synth.train_fraction", [&](const std::string& v) { train_fraction = parse_double(v); });
  take("synth.continuous_fields", [&](const std::string& v) { continuous_fields = parse_size(v); });
  take("synth.categorical_fields", [&](const std::string& v) { categorical_fields = parse_size(v); });
  return used;
}

namespace {

struct ContinuousField {
  const char* name;
  double mean;
  double sd;
  int decimals;
};

const std::vector<ContinuousField>& continuous_fields() {
  static const std::vector<ContinuousField> fields = {
      {"nihss", 16.0, 6.0, 0},          {"age", 70.0, 12.0, 0},
      {"aspects", 8.0, 1.8, 0},         {"glucose", 7.5, 2.0, 1},
      {"sbp", 150.0, 22.0, 0},          {"dbp", 82.0, 13.0, 0},
      {"onset_to_door", 140.0, 60.0, 0}, {"inr", 1.05, 0.12, 2},
      {"platelets", 240.0, 60.0, 0},    {"creatinine", 85.0, 20.0, 0},
      {"weight", 78.0, 14.0, 0},        {"temperature", 36.8, 0.4, 1},
  };
  return fields;
}

// Relative loading and sign of the planted fields (the first four continuous fields).
constexpr std::array<double, 4> kPlantedLoading{1.0, 0.95, 0.85, 0.75};
constexpr std::array<double, 4> kPlantedSign{1.0, 1.0, -1.0, 1.0};

struct CategoricalField {
  const char* name;
  std::vector<const char*> levels;
  std::vector<double> weights;
};

const std::vector<CategoricalField>& categorical_fields() {
  static const std::vector<CategoricalField> fields = {
      {"sex", {"F", "M"}, {0.5, 0.5}},
      {"occlusion", {"ICA", "M1", "M2"}, {0.2, 0.6, 0.2}},
      {"collaterals", {"0", "1", "2", "3"}, {0.25, 0.25, 0.25, 0.25}},
      {"side", {"L", "R"}, {0.5, 0.5}},
      {"hypertension", {"no", "yes"}, {0.4, 0.6}},
      {"diabetes", {"no", "yes"}, {0.8, 0.2}},
      {"atrial_fibrillation", {"no", "yes"}, {0.7, 0.3}},
      {"prior_stroke", {"no", "yes"}, {0.85, 0.15}},
  };
  return fields;
}

double round_to(double v, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::round(v * f) / f;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Volume render_volume(const SyntheticSpec& spec, double lesion_driver, Rng& rng) {
  const auto [D, H, W] = spec.dims;
  Volume v = Volume::filled(spec.dims, spec.spacing, -1000.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double zc = 0.5 * static_cast<double>(D) - 0.5;
  const double yc = 0.5 * static_cast<double>(H) - 0.5;
  const double xc = 0.5 * static_cast<double>(W) - 0.5;
  const double ry = 0.42 * static_cast<double>(H);
  const double rx = 0.36 * static_cast<double>(W);
  const double rz = 0.62 * static_cast<double>(D);
  const double skull = 2.0 * static_cast<double>(W) / 48.0;

  const double u = normal_cdf(lesion_driver);
  const double scale = static_cast<double>(W) / 48.0;
  const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double lx = xc + side * (0.3 + 0.25 * unit(rng)) * rx;
  const double ly = yc + (unit(rng) - 0.5) * 0.6 * ry;
  const double lz = zc + (unit(rng) - 0.5) * 0.4 * static_cast<double>(D);
  const auto lerp = [u](const std::array<double, 2>& range) {
    return range[0] + u * (range[1] - range[0]);
  };
  const double lr = lerp(spec.lesion_radius) * scale;
  const double lrz = std::max(0.75, lr / scale * 0.3 * static_cast<double>(D) / 16.0);
  const double contrast = lerp(spec.lesion_contrast);

  for (std::size_t z = 0; z < D; ++z) {
    const double dz = (static_cast<double>(z) - zc) / rz;
    const double f = std::sqrt(std::max(0.0, 1.0 - dz * dz));
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double& out = v.at(z, y, x);
        if (f <= 0.0) {
          out = -1000.0 + 5.0 * noise(rng);
          continue;
        }
        const double dy = (static_cast<double>(y) - yc) / (ry * f);
        const double dx = (static_cast<double>(x) - xc) / (rx * f);
        const double d = std::sqrt(dy * dy + dx * dx);
        const double inner = 1.0 - skull / (std::min(ry, rx) * f);
        if (d >= 1.0) {
          out = -1000.0 + 5.0 * noise(rng);
        } else if (d >= inner) {
          out = 600.0 + 40.0 * noise(rng);
        } else {
          out = 72.0 + spec.tissue_noise_sd * noise(rng);
          const double ey = (static_cast<double>(y) - ly) / lr;
          const double ex = (static_cast<double>(x) - lx) / lr;
          const double ez = (static_cast<double>(z) - lz) / lrz;
          const double e2 = ey * ey + ex * ex + ez * ez;
          if (e2 < 1.0) out += (spec.hyperdense ? 1.0 : -1.0) * contrast * (1.0 - 0.3 * e2);
        }
      }
    }
  }
  quantize_to_float(v);
  return v;
}

}  // namespace

const std::vector<std::string>& planted_field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < kPlantedLoading.size(); ++j) out.emplace_back(continuous_fields()[j].name);
    return out;
  }();
  return names;
}

SyntheticCohort generate_synthetic_cohort(std::size_t n, const SyntheticSpec& spec,
                                          std::uint64_t seed) {
  spec.validate();
  const std::size_t total = std::accumulate(spec.class_counts.begin(), spec.class_counts.end(),
                                            std::size_t{0});
  if (total != n) {
    throw ParameterError("class counts sum to " + std::to_string(total) + " but n = " +
                         std::to_string(n));
  }
  if (n == 0) throw ParameterError("synthetic cohort needs at least one patient");

  Rng rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> a(n), b(n), severity(n);
  std::vector<int> treatment(n);
  SyntheticCohort cohort;
  cohort.image_driver.resize(n);
  cohort.metadata_driver.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = normal(rng);
    b[i] = normal(rng);
    const double eps = normal(rng);
    treatment[i] = unit(rng) < 0.5 ? 1 : 0;
    const bool noisy = unit(rng) < spec.label_noise;
    const double fresh_a = normal(rng);
    const double fresh_b = normal(rng);
    switch (spec.signal) {
      case SignalKind::none: severity[i] = eps; break;
      case SignalKind::image: severity[i] = a[i] + spec.residual_sd * eps; break;
      case SignalKind::metadata: severity[i] = b[i] + spec.residual_sd * eps; break;
      case SignalKind::split:
        severity[i] = (a[i] + b[i]) / std::sqrt(2.0) + spec.residual_sd * eps;
        break;
    }
    if (treatment[i] == 1 && a[i] < 0.0) severity[i] -= spec.treatment_interaction;
    cohort.image_driver[i] = noisy ? fresh_a : a[i];
    cohort.metadata_driver[i] = noisy ? fresh_b : b[i];
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return severity[i] < severity[j]; });
  std::vector<int> labels(n);
  std::size_t k = 0;
  for (int c = 0; c < kNumMrsClasses; ++c) {
    for (std::size_t m = 0; m < spec.class_counts[static_cast<std::size_t>(c)]; ++m) labels[order[k++]] = c;
  }

  const bool metadata_signal = spec.signal == SignalKind::metadata || spec.signal == SignalKind::split;
  CohortManifest& manifest = cohort.manifest;
  const std::span<const ContinuousField> cfields(continuous_fields().data(), spec.continuous_fields);
  const std::span<const CategoricalField> kfields(categorical_fields().data(), spec.categorical_fields);
  for (const auto& f : cfields) manifest.field_names.emplace_back(f.name);
  for (const auto& f : kfields) manifest.field_names.emplace_back(f.name);

  const std::size_t digits = std::to_string(n).size();
  for (std::size_t i = 0; i < n; ++i) {
    Rng prng(derive_seed(seed, 1, i));
    std::normal_distribution<double> pnormal(0.0, 1.0);
    PatientRecord r;
    std::string num = std::to_string(i);
    r.id = "P" + std::string(digits - num.size(), '0') + num;
    r.volume_path = "volumes/" + r.id + ".svol";
    r.treatment = treatment[i];
    r.mrs = labels[i];

    std::vector<double> planted;
    for (std::size_t j = 0; j < cfields.size(); ++j) {
      double z = pnormal(prng);
      if (j < kPlantedLoading.size()) {
        const double load = metadata_signal ? spec.metadata_effect * kPlantedLoading[j] : 0.0;
        z = kPlantedSign[j] * load * cohort.metadata_driver[i] + std::sqrt(1.0 - load * load) * z;
        planted.push_back(z);
      }
      double value = round_to(cfields[j].mean + cfields[j].sd * z, cfields[j].decimals);
      if (std::string(cfields[j].name) == "aspects") value = std::clamp(value, 0.0, 10.0);
      if (std::string(cfields[j].name) == "nihss") value = std::clamp(value, 0.0, 42.0);
      const bool missing = unit(prng) < spec.missing_rate;
      r.fields.push_back(missing ? kMissingToken : format_double(value));
    }
    for (const auto& f : kfields) {
      std::discrete_distribution<std::size_t> pick(f.weights.begin(), f.weights.end());
      const std::size_t level = pick(prng);
      const bool missing = unit(prng) < spec.missing_rate;
      r.fields.push_back(missing ? kMissingToken : std::string(f.levels[level]));
    }
    cohort.planted_features.push_back(std::move(planted));
    cohort.volumes.push_back(render_volume(spec, cohort.image_driver[i], prng));
    manifest.records.push_back(std::move(r));
  }
  split_cohort(manifest, spec.train_fraction, derive_seed(seed, 2));
  return cohort;
}

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "volumes");
  for (std::size_t i = 0; i < cohort.volumes.size(); ++i) {
    write_volume(cohort.volumes[i], dir / cohort.manifest.records[i].volume_path);
  }
  write_manifest(cohort.manifest, dir / "manifest.csv");
}

}  // namespace strokenet
