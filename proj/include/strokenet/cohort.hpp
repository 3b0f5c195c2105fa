#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "strokenet/model.hpp"
#include "strokenet/tensor.hpp"

namespace strokenet {

inline constexpr int kNumMrsClasses = 7;
inline constexpr std::size_t kClinicalWidth = 52;
inline const std::string kMissingToken = "NA";

enum class SplitTag { none, train, test };
std::string to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& text);

struct PatientRecord {
  std::string id;
  std::string volume_path;  // relative paths resolve against the manifest directory
  int treatment = 0;        // 0 = control, 1 = EVT
  int mrs = 0;              // 0..6
  SplitTag split = SplitTag::none;
  std::vector<std::string> fields;  // raw clinical values, "NA" when missing

  void validate(std::size_t field_count) const;
};

enum class FieldKind { continuous, categorical };

struct FieldStats {
  std::string name;
  FieldKind kind = FieldKind::continuous;
  double mean = 0.0;
  double stddev = 1.0;
  double median = 0.0;
  std::vector<std::string> levels;  // categorical, sorted, from training rows
};

struct CohortManifest {
  std::vector<PatientRecord> records;
  std::vector<std::string> field_names;
  // Declared width of the encoded clinical vector.
  std::size_t metadata_width = kClinicalWidth;
  // Filled by fit_statistics(); empty until then.
  std::vector<FieldStats> stats;

  // Field kinds come from all rows (any non-numeric value makes a field categorical);
  // every statistic and level list comes from train-tagged rows only.
  void fit_statistics();
  bool fitted() const noexcept { return stats.size() == field_names.size() && !field_names.empty(); }

  std::array<std::size_t, kNumMrsClasses> class_counts(SplitTag tag) const;
  std::vector<std::size_t> indices(SplitTag tag) const;
  void validate() const;
};

// Manifest CSV: header "id,volume_path,treatment,mrs,split,<fields...>".
CohortManifest parse_manifest(const std::string& csv);
std::string format_manifest(const CohortManifest& manifest);
CohortManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path);

// Column names of the encoded clinical vector:
// treatment one-hot, then (z, missing flag) per continuous field, then one-hot levels
// per categorical field, then zero padding up to metadata_width.
std::vector<std::string> metadata_layout(const CohortManifest& manifest);

struct EncodeDiagnostics {
  std::size_t unknown_levels = 0;
  std::size_t imputed = 0;
};

// image_only -> (1, 2) treatment one-hot. Other modes -> (1, metadata_width).
Tensor encode_metadata(const PatientRecord& record, const CohortManifest& manifest, Mode mode,
                       EncodeDiagnostics* diagnostics = nullptr);

// Stratified selection. Each label keeps floor(fraction * count) of its (seeded,
// shuffled) members; leftover slots up to round(fraction * n) go to the labels with
// the largest fractional remainder. Singleton labels are always kept.
std::vector<bool> stratified_selection(std::span<const int> labels, double fraction,
                                       std::uint64_t seed);

// Tags every record train or test, stratified by mRS. Throws ConfigError when the
// split would leave either side empty.
void split_cohort(CohortManifest& manifest, double train_fraction, std::uint64_t seed);

}  // namespace strokenet
