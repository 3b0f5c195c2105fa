#pragma once

// CT preprocessing: resample -> clip -> crop/pad -> (augment, training only) -> normalise.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "strokenet/layers.hpp"
#include "strokenet/tensor.hpp"
#include "strokenet/volume.hpp"

namespace strokenet {

inline constexpr double kHuLow = 40.0;
inline constexpr double kHuHigh = 100.0;

struct PreprocessConfig {
  std::array<double, 3> target_spacing{5.0, 1.0, 1.0};  // (sz, sy, sx): 1x1 mm in-plane, 5 mm slices
  double hu_low = kHuLow;
  double hu_high = kHuHigh;
  std::array<std::size_t, 3> target_dims{32, 192, 192};  // (D, H, W)
  double fill_value = kHuLow;
};

struct AugmentConfig {
  double flip_x_probability = 0.5;
  double flip_y_probability = 0.5;
  double rotation_probability = 0.5;
  double max_rotation_degrees = 10.0;
  double elastic_probability = 0.5;
  double elastic_sigma = 4.0;             // voxels
  double elastic_max_displacement = 8.0;  // voxels
  double noise_sigma = 2.0;               // HU
  double hu_low = kHuLow;
  double hu_high = kHuHigh;
  double fill_value = kHuLow;
};

// Trilinear resampling onto target spacing. New dims = round(dim * spacing / target).
// Output voxel i samples input coordinate i * target / spacing (edge-clamped).
Volume resample(const Volume& v, const std::array<double, 3>& target_spacing);
Volume clip_hu(const Volume& v, double lo = kHuLow, double hi = kHuHigh);
// Centre crop or symmetric pad per axis; an odd remainder goes to the high-index side.
Volume crop_or_pad(const Volume& v, const std::array<std::size_t, 3>& target_dims,
                   double fill_value = kHuLow);

Volume flip_x(const Volume& v);
Volume flip_y(const Volume& v);
// In-plane rotation about the volume centre, bilinear within each slice.
Volume rotate_inplane(const Volume& v, double degrees, double fill_value = kHuLow);

// In-plane displacement field shared by every slice, (H x W) per component.
struct DisplacementField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> dy;
  std::vector<double> dx;
};

// Uniform [-1,1] noise smoothed by a Gaussian of `sigma` voxels, rescaled so the
// largest displacement magnitude equals max_displacement.
DisplacementField random_displacement_field(std::size_t height, std::size_t width, double sigma,
                                            double max_displacement, Rng& rng);
Volume elastic_deform(const Volume& v, const DisplacementField& field, double fill_value = kHuLow);
Volume add_gaussian_noise(const Volume& v, double sigma, Rng& rng);

Volume augment(const Volume& v, Rng& rng, const AugmentConfig& config = {});

// (v - mean) / max(std, 1e-8) as a (1, D, H, W) tensor.
Tensor normalize(const Volume& v);

enum class PipelineStage { resample, clip, crop_or_pad, augment, normalize };
std::string to_string(PipelineStage stage);

// Records the stages applied to one volume and rejects any out-of-order stage.
class PipelineTrace {
 public:
  void record(PipelineStage stage);
  const std::vector<PipelineStage>& stages() const noexcept { return stages_; }

 private:
  std::vector<PipelineStage> stages_;
};

// resample -> clip -> crop_or_pad.
Volume prepare_volume(const Volume& raw, const PreprocessConfig& config,
                      PipelineTrace* trace = nullptr);
// augment (training only) -> normalize. rng is only touched when training.
Tensor finish_volume(const Volume& prepared, bool training, const AugmentConfig& augment_config,
                     Rng* rng, PipelineTrace* trace = nullptr);

}  // namespace strokenet
