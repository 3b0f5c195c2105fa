// Acceptance suite: one PASS/FAIL line per criterion, details on "#" lines.
//
//   strokenet_acceptance [--only 1,2,5] [--seeds N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "strokenet/binary_io.hpp"
#include "strokenet/checkpoint.hpp"
#include "strokenet/cohort.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/experiment.hpp"
#include "strokenet/layers.hpp"
#include "strokenet/metrics.hpp"
#include "strokenet/model.hpp"
#include "strokenet/synthetic.hpp"
#include "strokenet/training.hpp"

#ifndef STROKENET_SOURCE_DIR
#define STROKENET_SOURCE_DIR "."
#endif

using namespace strokenet;
using oracle::mixed_error;
using oracle::numeric_gradient;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ----
constexpr double kFdStep = 1e-5;
constexpr double kLayerGradTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kConvOracleTol = 1e-10;
constexpr double kFocalCeTol = 1e-12;
constexpr double kImageAucMin = 0.80;
constexpr double kMetadataAucMin = 0.80;
constexpr double kFusionMargin = 0.03;
constexpr double kNullAuc = 0.50;
constexpr double kNullAucTol = 0.05;
constexpr double kRunSecondsMax = 15.0 * 60.0;
constexpr int kFocalWinsNeeded = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(const std::string& id, bool pass, const std::string& what) {
  std::cout << (pass ? "PASS " : "FAIL ") << id << " " << what << std::endl;
  if (!pass) ++failures;
}

void note(const std::string& text) { std::cout << "# " << text << std::endl; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x, 3);
  return s;
}

// ---- criterion 1: gradient suite ----

// Worst mixed error of one analytic gradient against central differences of dot(r, f(.)).
double fd_error(const Tensor& analytic, const Tensor& at, const std::function<Tensor(const Tensor&)>& f,
                const Tensor& r) {
  return mixed_error(analytic, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, f(t)); }, at, kFdStep));
}

double kink_margin(const ForwardCache& cache, Mode mode) {
  double m = std::numeric_limits<double>::infinity();
  auto scan = [&](const Tensor& t) {
    for (double v : t.data()) m = std::min(m, std::abs(v));
  };
  if (mode == Mode::metadata_only) {
    scan(cache.clinic.hidden_pre);
    return m;
  }
  for (const auto& b : cache.ife.blocks) scan(b.norm_out);
  scan(cache.imf.image_pre);
  scan(cache.imf.meta_pre);
  return m;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const std::array<Shape, 3> volumes{Shape{1, 2, 3, 4, 4}, Shape{2, 3, 2, 3, 5}, Shape{2, 1, 4, 3, 3}};
  std::vector<std::pair<std::string, double>> worst;
  auto track = [&](const std::string& layer, double e) {
    for (auto& [name, w] : worst)
      if (name == layer) {
        w = std::max(w, e);
        return;
      }
    worst.emplace_back(layer, e);
  };

  for (const auto& s : volumes) {
    ConvSpec spec{{2, 1, 2}, {1, 1, 1}};
    Tensor x = random_tensor(s, rng), w = random_tensor({2, s[1], 3, 3, 3}, rng), b = random_tensor({2}, rng);
    Tensor r = random_tensor(conv3d(x, w, b, spec).shape(), rng);
    Conv3dGrads g = conv3d_backward(x, w, spec, r);
    track("conv3d", fd_error(g.input, x, [&](const Tensor& t) { return conv3d(t, w, b, spec); }, r));
    track("conv3d", fd_error(g.weight, w, [&](const Tensor& t) { return conv3d(x, t, b, spec); }, r));
    track("conv3d", fd_error(g.bias, b, [&](const Tensor& t) { return conv3d(x, w, t, spec); }, r));

    Tensor sc = random_tensor({s[1]}, rng, 0.5, 1.5), sh = random_tensor({s[1]}, rng);
    Tensor xr = random_tensor(s, rng, -2, 2), rr = random_tensor(s, rng);
    InstanceNormCache ic;
    instance_norm3d(xr, sc, sh, kDefaultNormEps, &ic);
    InstanceNormGrads ig = instance_norm3d_backward(ic, sc, rr);
    track("instance_norm3d", fd_error(ig.input, xr, [&](const Tensor& t) { return instance_norm3d(t, sc, sh); }, rr));
    track("instance_norm3d", fd_error(ig.scale, sc, [&](const Tensor& t) { return instance_norm3d(xr, t, sh); }, rr));
    track("instance_norm3d", fd_error(ig.shift, sh, [&](const Tensor& t) { return instance_norm3d(xr, sc, t); }, rr));

    Tensor gr = random_tensor({s[0], s[1]}, rng);
    track("global_avg_pool", fd_error(global_avg_pool_backward(s, gr), xr,
                                      [&](const Tensor& t) { return global_avg_pool(t); }, gr));

    const std::size_t h = cse_hidden_width(s[1], 2);
    Tensor w1 = random_tensor({h, s[1]}, rng), b1 = random_tensor({h}, rng, 0.2, 1.0);
    Tensor w2 = random_tensor({s[1], h}, rng), b2 = random_tensor({s[1]}, rng);
    CseCache cc;
    cse_block(xr, {w1, b1, w2, b2}, &cc);
    CseGrads cg = cse_block_backward(xr, {w1, b1, w2, b2}, cc, rr);
    track("cSE", fd_error(cg.input, xr, [&](const Tensor& t) { return cse_block(t, {w1, b1, w2, b2}); }, rr));
    track("cSE", fd_error(cg.squeeze_weight, w1, [&](const Tensor& t) { return cse_block(xr, {t, b1, w2, b2}); }, rr));
    track("cSE", fd_error(cg.squeeze_bias, b1, [&](const Tensor& t) { return cse_block(xr, {w1, t, w2, b2}); }, rr));
    track("cSE", fd_error(cg.excite_weight, w2, [&](const Tensor& t) { return cse_block(xr, {w1, b1, t, b2}); }, rr));
    track("cSE", fd_error(cg.excite_bias, b2, [&](const Tensor& t) { return cse_block(xr, {w1, b1, w2, t}); }, rr));

    Tensor sw = random_tensor({1, s[1], 1, 1, 1}, rng), sb = random_tensor({1}, rng);
    SseCache scache;
    sse_block(xr, sw, sb, &scache);
    SseGrads sg = sse_block_backward(xr, sw, scache, rr);
    track("sSE", fd_error(sg.input, xr, [&](const Tensor& t) { return sse_block(t, sw, sb); }, rr));
    track("sSE", fd_error(sg.weight, sw, [&](const Tensor& t) { return sse_block(xr, t, sb); }, rr));
    track("sSE", fd_error(sg.bias, sb, [&](const Tensor& t) { return sse_block(xr, sw, t); }, rr));
  }

  for (const auto& s : {Shape{3, 4}, Shape{2, 3, 5}, Shape{1, 2, 2, 3, 3}}) {
    for (const auto& act : {Activation::leaky_relu(), Activation::relu(), Activation::sigmoid()}) {
      Tensor x = random_tensor(s, rng, -2, 2);
      for (auto& v : x.mutable_data())
        if (std::abs(v) < 1e-3) v = 0.5;
      Tensor r = random_tensor(s, rng);
      Tensor g = activation_backward(x, activation(x, act), act, r);
      track("activations", fd_error(g, x, [&](const Tensor& t) { return activation(t, act); }, r));
    }
  }

  for (auto [n, in, out] : {std::array<std::size_t, 3>{1, 3, 2}, {4, 5, 3}, {3, 2, 6}}) {
    Tensor x = random_tensor({n, in}, rng), w = random_tensor({out, in}, rng), b = random_tensor({out}, rng);
    Tensor r = random_tensor({n, out}, rng);
    LinearGrads g = linear_backward(x, w, r);
    track("linear", fd_error(g.input, x, [&](const Tensor& t) { return linear(t, w, b); }, r));
    track("linear", fd_error(g.weight, w, [&](const Tensor& t) { return linear(x, t, b); }, r));
    track("linear", fd_error(g.bias, b, [&](const Tensor& t) { return linear(x, w, t); }, r));
  }

  for (const auto& s : {Shape{1, 2}, Shape{3, 7}, Shape{4, 5}}) {
    Tensor x = random_tensor(s, rng, -3, 3), r = random_tensor(s, rng);
    track("softmax", fd_error(softmax_backward(softmax(x), r), x, [&](const Tensor& t) { return softmax(t); }, r));
  }

  for (auto [n, c] : {std::array<std::size_t, 2>{1, 2}, {3, 7}, {4, 2}}) {
    for (double gamma : {0.0, 2.0}) {
      Tensor logits = random_tensor({n, c}, rng, -2, 2);
      std::vector<int> y(n);
      for (auto& v : y) v = static_cast<int>(rng() % c);
      std::vector<double> alpha(c, 0.0);
      for (auto& a : alpha) a = 0.1 + 0.9 * std::uniform_real_distribution<double>()(rng);
      FocalLossResult fr = focal_loss(softmax(logits), y, alpha, gamma);
      Tensor num = numeric_gradient([&](const Tensor& t) { return focal_loss(softmax(t), y, alpha, gamma).loss; },
                                    logits, kFdStep);
      track("focal_loss", mixed_error(fr.grad_logits, num));
    }
  }

  bool layers_ok = true;
  std::string detail;
  for (const auto& [name, e] : worst) {
    layers_ok = layers_ok && e < kLayerGradTol;
    detail += name + "=" + fmt(e, 2) + " ";
  }
  note("layer mixed errors (3 shapes each): " + detail);

  double e2e = 0.0;
  for (bool attention : {true, false}) {
    for (Mode mode : {Mode::image_only, Mode::multimodal, Mode::metadata_only}) {
      ModelConfig c;
      c.mode = mode;
      c.conv_channels = {2, 3, 4};
      c.image_feature_size = 4;
      c.metadata_feature_size = 3;
      c.clinic_hidden = 6;
      c.metadata_dim = mode == Mode::image_only ? 2 : kClinicalWidth;
      c.attention_enabled = attention;
      c.dropout_rate = 0.0;
      Rng init(202);
      ModelParams p = build_model(c, init);
      std::mt19937_64 drng(303);
      Tensor x, meta;
      ForwardCache cache;
      for (int draw = 0; draw < 50; ++draw) {
        x = mode == Mode::metadata_only ? Tensor({1}) : random_tensor({2, 1, 8, 12, 12}, drng);
        meta = random_tensor({2, c.metadata_dim}, drng);
        Rng fr(0);
        forward_logits(x, meta, p, c, true, fr, &cache);
        if (kink_margin(cache, mode) > 1e-3) break;
      }
      Tensor r = random_tensor({2, c.num_classes}, drng);
      ModelParams grads = p.zeros_like();
      backward_logits(cache, r, p, c, grads);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const std::string& name = p.entry(k).name;
        Tensor num = numeric_gradient(
            [&](const Tensor& t) {
              ModelParams q = p;
              q.at(name) = t;
              Rng unused(0);
              return oracle::dot(r, forward_logits(x, meta, q, c, false, unused));
            },
            p.entry(k).value, kFdStep);
        e2e = std::max(e2e, mixed_error(grads.at(name), num));
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict("1a", layers_ok, "every layer and the focal loss pass finite differences (< " + fmt(kLayerGradTol) + ")");
  verdict("1b", e2e < kEndToEndTol,
          "end-to-end tiny model gradient within " + fmt(kEndToEndTol) + " (worst " + fmt(e2e, 2) + ")");
  verdict("1c", secs < kGradSuiteSeconds, "gradient suite runtime " + fmt(secs, 3) + " s < 120 s");
}

// ---- criterion 2: oracle equivalence ----

void criterion_oracles() {
  std::mt19937_64 rng(404);
  double conv_err = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t ci = 1 + rng() % 3, co = 1 + rng() % 3;
    Shape s{1 + rng() % 2, ci, 2 + rng() % 4, 3 + rng() % 4, 3 + rng() % 4};
    std::array<std::size_t, 3> stride{1 + rng() % 2, 1 + rng() % 2, 1 + rng() % 2};
    Tensor x = random_tensor(s, rng), w = random_tensor({co, ci, 3, 3, 3}, rng), b = random_tensor({co}, rng);
    Tensor fast = conv3d(x, w, b, ConvSpec{stride, {1, 1, 1}});
    Tensor slow = oracle::conv3d(x, w, b, stride, {1, 1, 1});
    for (std::size_t i = 0; i < fast.size(); ++i) conv_err = std::max(conv_err, std::abs(fast[i] - slow[i]));
  }
  verdict("2a", conv_err < kConvOracleTol, "conv3d matches the nested-loop oracle (max diff " + fmt(conv_err, 2) + ")");

  int auc_exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng() % 60;
    std::vector<int> truth(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 2);
      scores[i] = static_cast<double>(rng() % 10) / 10.0;
    }
    truth[0] = 0;
    truth[1] = 1;
    auc_exact += auc(scores, truth) == oracle::pair_auc(scores, truth, kGoodOutcome);
  }
  verdict("2b", auc_exact == 100, "AUC equals O(n^2) pair counting exactly on " + std::to_string(auc_exact) + "/100 cases");

  double ce_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 8, c = trial % 2 ? 7 : 2;
    Tensor p = softmax(random_tensor({n, c}, rng, -4, 4));
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % c);
    const double focal = focal_loss(p, y, std::vector<double>(c, 1.0), 0.0).loss;
    ce_err = std::max(ce_err, std::abs(focal - oracle::mean_cross_entropy(p, y)));
  }
  verdict("2c", ce_err <= kFocalCeTol, "focal loss (gamma=0, alpha=1) equals cross-entropy (max diff " + fmt(ce_err, 2) + ")");
}

// ---- criterion 3: shape contract ----

void criterion_shapes() {
  ModelConfig c;
  c.mode = Mode::multimodal;
  c.metadata_dim = kClinicalWidth;
  Rng rng(505);
  ModelParams p = build_model(c, rng);
  std::mt19937_64 drng(506);
  Tensor x = random_tensor({1, 1, 32, 192, 192}, drng);
  IfeCache cache;
  Tensor feat = ife_forward(x, p, c, &cache);
  Tensor fused = imf_forward(feat, random_tensor({1, kClinicalWidth}, drng), p, c);
  const bool ok = cache.blocks[0].output.shape() == Shape{1, 16, 16, 96, 96} &&
                  cache.blocks[1].output.shape() == Shape{1, 32, 8, 48, 48} &&
                  cache.blocks[2].output.shape() == Shape{1, 64, 8, 48, 48} && feat.shape() == Shape{1, 64} &&
                  fused.shape() == Shape{1, c.image_feature_size + c.metadata_feature_size};
  verdict("3", ok,
          "default pipeline " + shape_to_string(x.shape()) + " -> " + shape_to_string(cache.blocks[0].output.shape()) +
              " -> " + shape_to_string(cache.blocks[1].output.shape()) + " -> " +
              shape_to_string(cache.blocks[2].output.shape()) + " -> " + shape_to_string(feat.shape()) +
              ", IMF width " + std::to_string(fused.dim(1)));
}

// ---- criterion 4: protocol constants ----

void criterion_protocol() {
  RunConfig c;
  c.resolve();
  std::vector<std::string> bad;
  auto want = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  want(c.preprocess.target_spacing == std::array<double, 3>{5.0, 1.0, 1.0}, "voxel 1x1x5 mm");
  want(c.preprocess.hu_low == 40.0 && c.preprocess.hu_high == 100.0, "HU window [40,100]");
  want(c.preprocess.target_dims == std::array<std::size_t, 3>{32, 192, 192}, "grid 32x192x192");
  want(c.train.batch_size == 8, "batch 8");
  want(c.train.max_epochs == 300, "300 epochs");
  want(c.train.patience == 50, "patience 50");
  want(c.train.momentum == 0.9, "momentum 0.9");
  want(c.train.lr_init == 3e-5 && cosine_lr(0, c.train) == 3e-5, "lr 3e-5");
  want(cosine_lr(300, c.train) == 0.0 && cosine_lr(150, c.train) < 3e-5, "cosine decay to 0");
  want(c.train_fraction == 0.8, "80/20 split");
  SyntheticSpec spec;
  spec.dims = {2, 8, 8};
  spec.signal = SignalKind::none;
  SyntheticCohort cohort = generate_synthetic_cohort(500, spec, 1);
  CohortManifest m = cohort.manifest;
  for (auto& r : m.records) r.split = SplitTag::none;
  split_cohort(m, c.train_fraction, 7);
  const auto train = m.class_counts(SplitTag::train);
  bool stratified = m.indices(SplitTag::train).size() == 400;
  for (int k = 0; k < kNumMrsClasses; ++k) {
    stratified = stratified && std::abs(static_cast<double>(train[k]) - 0.8 * static_cast<double>(kDefaultClassCounts[k])) <= 1.0;
  }
  want(stratified, "stratified 400/100 split");
  std::string missing;
  for (const auto& b : bad) missing += " " + b;
  verdict("4", bad.empty(), "protocol constants from config defaults" + (bad.empty() ? "" : ":" + missing));
}

// ---- desk-scale runs (criteria 5 and 6) ----

struct DeskSettings {
  KeyValues run;
  KeyValues synth;
};

DeskSettings load_desk_settings() {
  DeskSettings d;
  d.run = read_key_value_file(fs::path(STROKENET_SOURCE_DIR) / "configs" / "desk_scale.cfg");
  d.synth = read_key_value_file(fs::path(STROKENET_SOURCE_DIR) / "configs" / "desk_synth.cfg");
  return d;
}

struct RunOutcome {
  double auc = 0.0;
  double good_recall = 0.0;
  double seconds = 0.0;
};

SyntheticCohort desk_cohort(const DeskSettings& d, SignalKind signal, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.apply_key_values(d.synth);
  spec.signal = signal;
  return generate_synthetic_cohort(500, spec, seed);
}

RunOutcome desk_run(const DeskSettings& d, const SyntheticCohort& cohort, Mode mode, std::uint64_t seed,
                    const KeyValues& overrides = {}) {
  RunConfig rc;
  rc.apply_key_values(d.run);
  rc.apply_key_values(overrides);
  rc.model.mode = mode;
  rc.seed = seed;
  CohortSource src;
  src.manifest = cohort.manifest;
  src.volumes = cohort.volumes;
  const auto t0 = Clock::now();
  ExperimentResult r = run_experiment(rc, src);
  RunOutcome o;
  o.seconds = seconds_since(t0);
  o.auc = r.report.auc.value_or(std::nan(""));
  const auto& row = r.report.confusion[kGoodOutcome];
  const double good = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
  o.good_recall = static_cast<double>(row[kGoodOutcome]) / good;
  note("run mode=" + to_string(mode) + " seed=" + std::to_string(seed) + " auc=" + fmt(o.auc) +
       " good_recall=" + fmt(o.good_recall) + " best_epoch=" + std::to_string(r.training.best_epoch) +
       " seconds=" + fmt(o.seconds, 3));
  return o;
}

void criteria_learning(std::size_t seeds, bool with5, bool with6) {
  const DeskSettings d = load_desk_settings();
  double slowest = 0.0;
  auto keep = [&](const RunOutcome& o) {
    slowest = std::max(slowest, o.seconds);
    return o.auc;
  };

  if (with5) {
    std::vector<double> img;
    for (std::uint64_t s = 1; s <= seeds; ++s) {
      note("cohort signal=image seed=" + std::to_string(s));
      SyntheticCohort c = desk_cohort(d, SignalKind::image, s);
      img.push_back(keep(desk_run(d, c, Mode::image_only, s)));
    }
    verdict("5a", median(img) >= kImageAucMin,
            "image signal: image model median AUC " + fmt(median(img)) + " >= 0.80 [" + join(img) + "]");
  }

  std::vector<double> meta, focal_recall;
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    note("cohort signal=metadata seed=" + std::to_string(s));
    SyntheticCohort c = desk_cohort(d, SignalKind::metadata, s);
    RunOutcome o = desk_run(d, c, Mode::metadata_only, s);
    meta.push_back(keep(o));
    focal_recall.push_back(o.good_recall);
    if (with6) {
      RunOutcome ce = desk_run(d, c, Mode::metadata_only, s, {{"train.gamma", "0"}, {"train.alpha", "1,1"}});
      slowest = std::max(slowest, ce.seconds);
      focal_recall.back() -= ce.good_recall;
    }
  }
  if (with5) {
    verdict("5b", median(meta) >= kMetadataAucMin,
            "metadata signal: ClinicDNN median AUC " + fmt(median(meta)) + " >= 0.80 [" + join(meta) + "]");
  }
  if (with6) {
    const auto wins = std::count_if(focal_recall.begin(), focal_recall.end(), [](double v) { return v > 0.0; });
    verdict("6", wins >= kFocalWinsNeeded,
            "focal loss raises minority (good outcome) recall over cross-entropy in " + std::to_string(wins) + "/" +
                std::to_string(seeds) + " seeds (recall deltas " + join(focal_recall) + ")");
  }
  if (!with5) return;

  std::vector<double> s_img, s_meta, s_mm;
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    note("cohort signal=split seed=" + std::to_string(s));
    SyntheticCohort c = desk_cohort(d, SignalKind::split, s);
    s_img.push_back(keep(desk_run(d, c, Mode::image_only, s)));
    s_meta.push_back(keep(desk_run(d, c, Mode::metadata_only, s)));
    s_mm.push_back(keep(desk_run(d, c, Mode::multimodal, s)));
  }
  const double best_uni = std::max(median(s_img), median(s_meta));
  verdict("5c", median(s_mm) - best_uni >= kFusionMargin,
          "split signal: multimodal median AUC " + fmt(median(s_mm)) + " exceeds best unimodal " + fmt(best_uni) +
              " by >= 0.03 [mm " + join(s_mm) + " | img " + join(s_img) + " | meta " + join(s_meta) + "]");

  std::vector<double> n_img, n_meta, n_mm;
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    note("cohort signal=none seed=" + std::to_string(s));
    SyntheticCohort c = desk_cohort(d, SignalKind::none, s);
    n_img.push_back(keep(desk_run(d, c, Mode::image_only, s)));
    n_meta.push_back(keep(desk_run(d, c, Mode::metadata_only, s)));
    n_mm.push_back(keep(desk_run(d, c, Mode::multimodal, s)));
  }
  bool null_ok = true;
  std::string null_detail;
  for (const auto& [name, v] : {std::pair{"image_only", n_img}, {"metadata_only", n_meta}, {"multimodal", n_mm}}) {
    null_ok = null_ok && std::abs(mean(v) - kNullAuc) <= kNullAucTol;
    null_detail += std::string(" ") + name + "=" + fmt(mean(v));
  }
  verdict("5d", null_ok, "no signal: every model's 5-seed mean AUC within 0.50 +/- 0.05:" + null_detail);
  verdict("5e", slowest <= kRunSecondsMax, "slowest desk-scale run " + fmt(slowest, 4) + " s <= 900 s");
}

// ---- criterion 7: ablation harness ----

RunConfig tiny_run(Mode mode, Experiment e, bool attention) {
  RunConfig c;
  c.experiment = e;
  c.model.mode = mode;
  c.model.attention_enabled = attention;
  c.model.conv_channels = {2, 3, 4};
  c.model.image_feature_size = 4;
  c.model.metadata_feature_size = 2;
  c.preprocess.target_dims = {4, 12, 12};
  c.train.max_epochs = 3;
  c.train.lr_init = 0.01;
  c.train.validation_fraction = 0.2;
  c.seed = 9;
  return c;
}

SyntheticCohort tiny_cohort(std::uint64_t seed) {
  SyntheticSpec s;
  s.dims = {4, 12, 12};
  s.class_counts = {2, 4, 6, 6, 8, 4, 8};
  return generate_synthetic_cohort(38, s, seed);
}

std::vector<std::string> metric_keys(const MetricsReport& r) {
  std::vector<std::string> keys;
  const KeyValues kv = parse_key_values(format_report(r).substr(0, format_report(r).find("[confusion_matrix]")));
  for (const auto& [k, v] : kv) {
    bool context = false;
    for (const auto& [ck, cv] : r.context) context = context || ck == k;
    if (!context) keys.push_back(k);
  }
  return keys;
}

void criterion_ablation() {
  ModelConfig on;
  on.mode = Mode::multimodal;
  on.metadata_dim = kClinicalWidth;
  ModelConfig off = on;
  off.attention_enabled = false;
  Rng r1(1), r2(1);
  const std::size_t n_on = build_model(on, r1).scalar_count(), n_off = build_model(off, r2).scalar_count();

  SyntheticCohort cohort = tiny_cohort(11);
  bool completed = true, same_structure = true, fewer = n_off < n_on;
  std::string detail;
  for (Experiment e : {Experiment::dichotomised, Experiment::individual}) {
    std::vector<std::string> keys[2];
    std::size_t counts[2] = {0, 0};
    for (int a = 0; a < 2; ++a) {
      CohortSource src;
      src.manifest = cohort.manifest;
      src.volumes = cohort.volumes;
      try {
        ExperimentResult r = run_experiment(tiny_run(Mode::multimodal, e, a == 0), src);
        keys[a] = metric_keys(r.report);
        counts[a] = r.parameter_count;
      } catch (const std::exception& ex) {
        completed = false;
        note(std::string("ablation run failed: ") + ex.what());
      }
    }
    same_structure = same_structure && keys[0] == keys[1] && !keys[0].empty();
    fewer = fewer && counts[1] < counts[0];
    std::string k;
    for (const auto& s : keys[0]) k += s + " ";
    detail += " " + to_string(e) + "{" + k + "}";
  }
  note("ablation metric columns:" + detail);
  verdict("7", completed && same_structure && fewer,
          "attention off: fewer parameters (default " + std::to_string(n_off) + " < " + std::to_string(n_on) +
              "), runs complete, identical metric columns");
}

// ---- criterion 8: metric invariants ----

void criterion_metrics() {
  std::mt19937_64 rng(808);
  bool nearest_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<int> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 7);
      t[i] = static_cast<int>(rng() % 7);
    }
    nearest_ok = nearest_ok && one_nearest_accuracy(p, t) >= accuracy(p, t);
  }
  verdict("8a", nearest_ok, "one-nearest accuracy >= accuracy on 1000 random prediction sets");

  bool rank_ok = true;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<int> t(n);
    std::vector<double> s(n), a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 2);
      s[i] = u(rng);
      a[i] = std::exp(3.0 * s[i]);
      b[i] = std::atan(10.0 * s[i] - 5.0);
    }
    t[0] = 0;
    t[1] = 1;
    const double base = auc(s, t);
    rank_ok = rank_ok && auc(a, t) == base && auc(b, t) == base;
  }
  verdict("8b", rank_ok, "AUC invariant under strictly increasing score transforms");

  std::vector<int> truth(500, kBadOutcome);
  std::fill(truth.begin(), truth.begin() + 127, kGoodOutcome);
  const std::vector<int> majority(500, kBadOutcome);
  const double acc = accuracy(majority, truth), f1 = f1_score(majority, truth);
  verdict("8c", f1 == 0.0 && std::abs(acc - 0.746) < 1e-12,
          "all-majority prediction: F1 (good class positive) = " + fmt(f1) + ", accuracy = " + fmt(acc));
}

// ---- criterion 9: determinism ----

void criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / "strokenet_acceptance_determinism";
  fs::remove_all(root);
  SyntheticCohort cohort = tiny_cohort(12);
  write_cohort(cohort, root / "cohort");
  bool identical = true;
  for (Mode mode : {Mode::image_only, Mode::multimodal, Mode::metadata_only}) {
    RunConfig c = tiny_run(mode, Experiment::dichotomised, true);
    c.cohort = root / "cohort";
    c.output_dir = root / "a";
    run_experiment(c);
    c.output_dir = root / "b";
    run_experiment(c);
    for (const char* f : {"checkpoint.stkf", "report.txt", "history.csv"}) {
      identical = identical && read_binary_file(root / "a" / f) == read_binary_file(root / "b" / f);
    }
  }
  verdict("9a", identical, "two identical seeded runs give bit-identical checkpoints, reports and histories");

  const auto bytes = read_binary_file(root / "a" / "checkpoint.stkf");
  Checkpoint ck = decode_checkpoint(bytes);
  Checkpoint again = decode_checkpoint(encode_checkpoint(ck.params, ck.config, ck.extra));
  verdict("9b", again.params == ck.params && encode_checkpoint(ck.params, ck.config, ck.extra) == bytes,
          "checkpoint round trip is bit-exact (" + std::to_string(ck.params.scalar_count()) + " values)");
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::size_t seeds = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      for (const auto& part : split(argv[++i], ',')) only.insert(std::stoi(part));
    } else if (a == "--seeds" && i + 1 < argc) {
      seeds = std::stoul(argv[++i]);
    } else {
      std::cerr << "usage: strokenet_acceptance [--only 1,2,...] [--seeds N]\n";
      return 2;
    }
  }
  auto wanted = [&](int k) { return only.empty() || only.count(k) != 0; };
  const auto t0 = Clock::now();
  try {
    if (wanted(1)) criterion_gradients();
    if (wanted(2)) criterion_oracles();
    if (wanted(3)) criterion_shapes();
    if (wanted(4)) criterion_protocol();
    if (wanted(7)) criterion_ablation();
    if (wanted(8)) criterion_metrics();
    if (wanted(9)) criterion_determinism();
    if (wanted(5) || wanted(6)) criteria_learning(seeds, wanted(5), wanted(6));
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    return 1;
  }
  note("total " + fmt(seconds_since(t0), 4) + " s, " + std::to_string(failures) + " failing criteria");
  return failures == 0 ? 0 : 1;
}
