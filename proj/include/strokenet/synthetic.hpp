#pragma once

// Synthetic stroke cohort with a planted, controllable outcome signal.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "strokenet/cohort.hpp"
#include "strokenet/text.hpp"
#include "strokenet/volume.hpp"

namespace strokenet {

enum class SignalKind { none, image, metadata, split };
std::string to_string(SignalKind kind);
SignalKind parse_signal_kind(const std::string& text);

inline constexpr std::array<std::size_t, kNumMrsClasses> kDefaultClassCounts{7, 36, 84, 87,
                                                                             133, 45, 108};

struct SyntheticSpec {
  SignalKind signal = SignalKind::image;
  std::array<std::size_t, kNumMrsClasses> class_counts = kDefaultClassCounts;
  std::array<std::size_t, 3> dims{16, 48, 48};
  std::array<double, 3> spacing{5.0, 1.0, 1.0};
  // Severity = signal driver + residual_sd * N(0,1); labels follow the severity ranking.
  double residual_sd = 0.25;
  // Loading of the strongest planted clinical field on the metadata driver.
  double metadata_effect = 0.95;
  // Lesion in-plane semi-axis (voxels at a 48-voxel width) and hypodensity (HU),
  // interpolated between min and max by the normal CDF of the image driver.
  std::array<double, 2> lesion_radius{3.0, 14.0};
  std::array<double, 2> lesion_contrast{10.0, 28.0};
  bool hyperdense = false;  // lesion brighter (true) or darker (false) than tissue
  double tissue_noise_sd = 4.0;  // HU
  double label_noise = 0.1;
  double missing_rate = 0.02;
  // Treated patients with a small lesion get their severity lowered by this amount.
  double treatment_interaction = 0.0;
  double train_fraction = 0.8;
  // How many of the built-in clinical fields to emit. The first four continuous ones are planted.
  std::size_t continuous_fields = 12;
  std::size_t categorical_fields = 8;

  void validate() const;

  // synth.* keys; apply returns the keys it consumed.
  KeyValues to_key_values() const;
  std::vector<std::string> apply_key_values(const KeyValues& kv);
};

struct SyntheticCohort {
  CohortManifest manifest;      // split-tagged, volume_path = volumes/<id>.svol
  std::vector<Volume> volumes;  // float-quantised, identical to what write_cohort stores
  std::vector<double> image_driver;     // lesion-size driver seen by the image
  std::vector<double> metadata_driver;  // driver seen by the planted clinical fields
  // Planted clinical fields before missingness, one row per patient.
  std::vector<std::vector<double>> planted_features;
};

// Names of the clinical fields that load on the metadata driver.
const std::vector<std::string>& planted_field_names();

// Throws ParameterError when the class counts do not sum to n or the spec is invalid.
SyntheticCohort generate_synthetic_cohort(std::size_t n, const SyntheticSpec& spec,
                                          std::uint64_t seed);

// Writes <dir>/manifest.csv and <dir>/volumes/<id>.svol.
void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir);

}  // namespace strokenet
