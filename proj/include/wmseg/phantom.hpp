#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmseg/volume.hpp"

namespace wmseg::phantom {

using Vec3 = std::array<double, 3>;  // voxel coordinates

/// A tube around a Catmull-Rom curve through the control points.
struct BundleSpec {
  std::string name;
  std::vector<Vec3> control_points;  // at least two
  double radius = 3.0;               // voxels
};

struct PhantomConfig {
  int64_t grid = 64;
  double spacing = 1.0;  // mm, isotropic
  std::vector<BundleSpec> bundles;
  double noise = 0.05;            // peak noise std at variant 0
  int64_t variants = 3;           // peak images per subject
  double jitter_translation = 1.5;  // voxels, per axis
  double jitter_rotation_deg = 3.0;
  double jitter_scale = 0.03;
  uint64_t seed = 0;

  /// Throws ConfigError for an invalid grid, empty bundles or bad numbers.
  void validate() const;
  int64_t tract_count() const { return static_cast<int64_t>(bundles.size()); }
  std::vector<std::string> tract_names() const;
};

/// Five bundles scaled to the grid: two straight, two curved and one that
/// crosses the first straight bundle at a right angle.
std::vector<BundleSpec> default_bundles(int64_t grid);

/// Default desk-scale configuration: 64^3 with the default bundles.
PhantomConfig default_config(int64_t grid = 64);

/// Dense samples (at most a quarter voxel apart) of the centreline.
std::vector<Vec3> sample_centreline(const std::vector<Vec3>& control_points);

struct Subject {
  std::vector<Volume> peaks;  // one per variant; variant v has noise*(1+v)
  Volume labels;              // one channel per bundle
};

/// Renders one subject. Control points are perturbed by a small random
/// affine around the grid centre; a bundle whose tube would leave the grid
/// raises ConfigError. Up to three bundles per voxel fill the peak slots in
/// bundle order. Noise is added only to nonzero peak slots.
Subject generate_subject(const PhantomConfig& cfg, uint64_t subject_index);

/// Subject identifier for a 0-based index: sub-0001, sub-0002, ...
std::string subject_id(int64_t index);

/// Writes sub-XXXX_peaks.nii.gz (variant 0), sub-XXXX_peaks_vN.nii.gz
/// (variants N >= 1), sub-XXXX_labels.nii.gz, dataset.txt (ids) and
/// tracts.txt (names). Returns the subject ids.
std::vector<std::string> generate_dataset(const PhantomConfig& cfg, int64_t n_subjects,
                                          const std::filesystem::path& out_dir);

std::filesystem::path peaks_path(const std::filesystem::path& dir, const std::string& id, int64_t variant = 0);
std::filesystem::path labels_path(const std::filesystem::path& dir, const std::string& id);

/// Reads dataset.txt (one id per line, blank lines and '#' ignored).
std::vector<std::string> read_dataset_ids(const std::filesystem::path& dir);
/// Reads tracts.txt, or returns an empty list when it is absent.
std::vector<std::string> read_tract_names(const std::filesystem::path& dir);
/// Number of peak variant files present for a subject.
int64_t count_variants(const std::filesystem::path& dir, const std::string& id);

}  // namespace wmseg::phantom
