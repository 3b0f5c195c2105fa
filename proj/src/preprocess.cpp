#include "strokenet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "strokenet/errors.hpp"

namespace strokenet {

namespace {

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Sample position c along an axis of length n: lower index, upper index, fraction.
inline void axis_sample(double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
  const double hi = static_cast<double>(n - 1);
  c = std::clamp(c, 0.0, hi);
  const double f = std::floor(c);
  i0 = static_cast<std::size_t>(f);
  i1 = std::min(i0 + 1, n - 1);
  t = c - f;
}

// Bilinear lookup inside slice z; returns fill outside [0,H-1]x[0,W-1].
double sample_inplane(const Volume& v, std::size_t z, double y, double x, double fill) {
  const double eps = 1e-9;
  if (y < -eps || x < -eps || y > static_cast<double>(v.dims[1] - 1) + eps ||
      x > static_cast<double>(v.dims[2] - 1) + eps) {
    return fill;
  }
  std::size_t y0, y1, x0, x1;
  double ty, tx;
  axis_sample(y, v.dims[1], y0, y1, ty);
  axis_sample(x, v.dims[2], x0, x1, tx);
  const double top = lerp(v.at(z, y0, x0), v.at(z, y0, x1), tx);
  const double bottom = lerp(v.at(z, y1, x0), v.at(z, y1, x1), tx);
  return lerp(top, bottom, ty);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& w : k) w /= sum;
  return k;
}

// Separable smoothing of an (H x W) field with edge clamping.
void smooth2d(std::vector<double>& field, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(field.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long xx = std::clamp<long>(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1);
        acc += k[i + r] * field[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long yy = std::clamp<long>(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
        acc += k[i + r] * tmp[yy * w + x];
      }
      field[y * w + x] = acc;
    }
  }
}

}  // namespace

Volume resample(const Volume& v, const std::array<double, 3>& target_spacing) {
  v.validate();
  for (auto s : target_spacing) {
    if (!(s > 0.0)) throw ParameterError("resample target spacing must be > 0");
  }
  Volume out;
  out.spacing = target_spacing;
  std::array<double, 3> step{};
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(v.dims[a]) * v.spacing[a] / target_spacing[a];
    out.dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(extent)));
    step[a] = target_spacing[a] / v.spacing[a];
  }
  out.voxels.resize(out.dims[0] * out.dims[1] * out.dims[2]);

  // Per-axis sample tables.
  std::array<std::vector<std::size_t>, 3> lo, hi;
  std::array<std::vector<double>, 3> frac;
  for (int a = 0; a < 3; ++a) {
    lo[a].resize(out.dims[a]);
    hi[a].resize(out.dims[a]);
    frac[a].resize(out.dims[a]);
    for (std::size_t i = 0; i < out.dims[a]; ++i) {
      axis_sample(static_cast<double>(i) * step[a], v.dims[a], lo[a][i], hi[a][i], frac[a][i]);
    }
  }
  for (std::size_t z = 0; z < out.dims[0]; ++z) {
    for (std::size_t y = 0; y < out.dims[1]; ++y) {
      for (std::size_t x = 0; x < out.dims[2]; ++x) {
        const std::size_t z0 = lo[0][z], z1 = hi[0][z];
        const std::size_t y0 = lo[1][y], y1 = hi[1][y];
        const std::size_t x0 = lo[2][x], x1 = hi[2][x];
        const double tz = frac[0][z], ty = frac[1][y], tx = frac[2][x];
        const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), tx);
        const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), tx);
        const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), tx);
        const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), tx);
        out.at(z, y, x) = lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tz);
      }
    }
  }
  return out;
}

Volume clip_hu(const Volume& v, double lo, double hi) {
  if (!(lo < hi)) throw ParameterError("clip_hu needs lo < hi");
  Volume out = v;
  for (auto& x : out.voxels) x = std::min(std::max(x, lo), hi);
  return out;
}

Volume crop_or_pad(const Volume& v, const std::array<std::size_t, 3>& target_dims,
                   double fill_value) {
  v.validate();
  for (auto d : target_dims)
    if (d == 0) throw ParameterError("crop_or_pad target dims must be >= 1");
  Volume out = Volume::filled(target_dims, v.spacing, fill_value);
  // Source offset (crop) or destination offset (pad) per axis.
  std::array<std::size_t, 3> src0{}, dst0{}, len{};
  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] >= target_dims[a]) {
      src0[a] = (v.dims[a] - target_dims[a]) / 2;
      len[a] = target_dims[a];
    } else {
      dst0[a] = (target_dims[a] - v.dims[a]) / 2;
      len[a] = v.dims[a];
    }
  }
  for (std::size_t z = 0; z < len[0]; ++z)
    for (std::size_t y = 0; y < len[1]; ++y)
      for (std::size_t x = 0; x < len[2]; ++x)
        out.at(dst0[0] + z, dst0[1] + y, dst0[2] + x) = v.at(src0[0] + z, src0[1] + y, src0[2] + x);
  return out;
}

Volume flip_x(const Volume& v) {
  Volume out = v;
  for (std::size_t z = 0; z < v.dims[0]; ++z)
    for (std::size_t y = 0; y < v.dims[1]; ++y)
      for (std::size_t x = 0; x < v.dims[2]; ++x) out.at(z, y, x) = v.at(z, y, v.dims[2] - 1 - x);
  return out;
}

Volume flip_y(const Volume& v) {
  Volume out = v;
  for (std::size_t z = 0; z < v.dims[0]; ++z)
    for (std::size_t y = 0; y < v.dims[1]; ++y)
      for (std::size_t x = 0; x < v.dims[2]; ++x) out.at(z, y, x) = v.at(z, v.dims[1] - 1 - y, x);
  return out;
}

Volume rotate_inplane(const Volume& v, double degrees, double fill_value) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = 0.5 * static_cast<double>(v.dims[1] - 1);
  const double cx = 0.5 * static_cast<double>(v.dims[2] - 1);
  Volume out = v;
  for (std::size_t y = 0; y < v.dims[1]; ++y) {
    for (std::size_t x = 0; x < v.dims[2]; ++x) {
      const double ry = static_cast<double>(y) - cy;
      const double rx = static_cast<double>(x) - cx;
      // Inverse rotation maps each output voxel back into the source slice.
      const double sy = c * ry - s * rx + cy;
      const double sx = s * ry + c * rx + cx;
      for (std::size_t z = 0; z < v.dims[0]; ++z) {
        out.at(z, y, x) = sample_inplane(v, z, sy, sx, fill_value);
      }
    }
  }
  return out;
}

DisplacementField random_displacement_field(std::size_t height, std::size_t width, double sigma,
                                            double max_displacement, Rng& rng) {
  DisplacementField f{height, width, std::vector<double>(height * width),
                      std::vector<double>(height * width)};
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (auto& d : f.dy) d = uniform(rng);
  for (auto& d : f.dx) d = uniform(rng);
  smooth2d(f.dy, height, width, sigma);
  smooth2d(f.dx, height, width, sigma);
  double peak = 0.0;
  for (std::size_t i = 0; i < f.dy.size(); ++i) peak = std::max(peak, std::hypot(f.dy[i], f.dx[i]));
  const double k = peak > 0.0 ? max_displacement / peak : 0.0;
  for (auto& d : f.dy) d *= k;
  for (auto& d : f.dx) d *= k;
  return f;
}

Volume elastic_deform(const Volume& v, const DisplacementField& field, double fill_value) {
  if (field.height != v.dims[1] || field.width != v.dims[2]) {
    throw ShapeError("displacement field does not match the volume's in-plane size");
  }
  Volume out = v;
  for (std::size_t y = 0; y < v.dims[1]; ++y) {
    for (std::size_t x = 0; x < v.dims[2]; ++x) {
      const std::size_t i = y * v.dims[2] + x;
      const double sy = static_cast<double>(y) + field.dy[i];
      const double sx = static_cast<double>(x) + field.dx[i];
      for (std::size_t z = 0; z < v.dims[0]; ++z) out.at(z, y, x) = sample_inplane(v, z, sy, sx, fill_value);
    }
  }
  return out;
}

Volume add_gaussian_noise(const Volume& v, double sigma, Rng& rng) {
  Volume out = v;
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& x : out.voxels) x += normal(rng);
  return out;
}

Volume augment(const Volume& v, Rng& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  // Draw every decision up front so the random stream layout is fixed.
  const bool do_flip_x = uniform(rng) < config.flip_x_probability;
  const bool do_flip_y = uniform(rng) < config.flip_y_probability;
  const bool do_rotate = uniform(rng) < config.rotation_probability;
  const double angle = (2.0 * uniform(rng) - 1.0) * config.max_rotation_degrees;
  const bool do_elastic = uniform(rng) < config.elastic_probability;

  Volume out = v;
  if (do_flip_x) out = flip_x(out);
  if (do_flip_y) out = flip_y(out);
  if (do_rotate) out = rotate_inplane(out, angle, config.fill_value);
  if (do_elastic) {
    auto field = random_displacement_field(out.dims[1], out.dims[2], config.elastic_sigma,
                                           config.elastic_max_displacement, rng);
    out = elastic_deform(out, field, config.fill_value);
  }
  out = add_gaussian_noise(out, config.noise_sigma, rng);
  return clip_hu(out, config.hu_low, config.hu_high);
}

Tensor normalize(const Volume& v) {
  v.validate();
  const double n = static_cast<double>(v.voxels.size());
  double mean = 0.0;
  for (double x : v.voxels) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v.voxels) var += (x - mean) * (x - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  Tensor t({1, v.dims[0], v.dims[1], v.dims[2]});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (v.voxels[i] - mean) / sd;
  return t;
}

std::string to_string(PipelineStage stage) {
  switch (stage) {
    case PipelineStage::resample: return "resample";
    case PipelineStage::clip: return "clip";
    case PipelineStage::crop_or_pad: return "crop_or_pad";
    case PipelineStage::augment: return "augment";
    case PipelineStage::normalize: return "normalize";
  }
  return "unknown";
}

void PipelineTrace::record(PipelineStage stage) {
  if (!stages_.empty() && static_cast<int>(stage) <= static_cast<int>(stages_.back())) {
    throw std::logic_error("pipeline stage '" + to_string(stage) + "' after '" +
                           to_string(stages_.back()) + "' violates resample > clip > crop_or_pad > "
                           "augment > normalize");
  }
  stages_.push_back(stage);
}

Volume prepare_volume(const Volume& raw, const PreprocessConfig& config, PipelineTrace* trace) {
  Volume v = resample(raw, config.target_spacing);
  if (trace) trace->record(PipelineStage::resample);
  v = clip_hu(v, config.hu_low, config.hu_high);
  if (trace) trace->record(PipelineStage::clip);
  v = crop_or_pad(v, config.target_dims, config.fill_value);
  if (trace) trace->record(PipelineStage::crop_or_pad);
  return v;
}

Tensor finish_volume(const Volume& prepared, bool training, const AugmentConfig& augment_config,
                     Rng* rng, PipelineTrace* trace) {
  if (training) {
    if (!rng) throw ParameterError("training-mode preprocessing needs a random generator");
    Volume augmented = augment(prepared, *rng, augment_config);
    if (trace) trace->record(PipelineStage::augment);
    Tensor t = normalize(augmented);
    if (trace) trace->record(PipelineStage::normalize);
    return t;
  }
  Tensor t = normalize(prepared);
  if (trace) trace->record(PipelineStage::normalize);
  return t;
}

}  // namespace strokenet
