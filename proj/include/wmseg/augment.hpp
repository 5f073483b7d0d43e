#pragma once

#include <array>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "wmseg/volume.hpp"

namespace wmseg::augment {

using Rng = std::mt19937_64;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges and switches for the training-time augmentations. The
/// defaults are the published distributions.
struct AugmentConfig {
  bool rotation = true;
  Range rotation_angle{-std::numbers::pi / 4, std::numbers::pi / 4};  // radians, per axis
  bool elastic = true;
  Range elastic_alpha{90.0, 120.0};
  Range elastic_sigma{9.0, 11.0};
  bool displacement = true;
  Range displacement_range{-10.0, 10.0};  // voxels, per in-plane axis
  bool zoom = true;
  Range zoom_factor{0.9, 1.5};
  bool resample = true;
  Range resample_factor{0.5, 1.0};
  bool noise = true;
  Range noise_variance{0.0, 0.05};
  bool contrast = true;
  Range contrast_factor{0.7, 1.3};
  bool brightness = true;
  Range brightness_factor{0.7, 1.3};
  // Rotate the in-plane components of each peak vector along with the grid.
  bool reorient_peaks = false;

  /// Throws ParameterError for empty or out-of-domain ranges.
  void validate() const;
  static AugmentConfig disabled();
};

/// One realization of every augmentation parameter, plus the smoothed and
/// scaled elastic displacement field when a grid size was given.
struct AugmentParams {
  std::array<double, 3> rotation{0.0, 0.0, 0.0};  // about x, y, z
  double elastic_alpha = 0.0;
  double elastic_sigma = 0.0;
  int64_t field_width = 0;
  int64_t field_height = 0;
  std::vector<float> field_u;  // displacement along the slice's first axis
  std::vector<float> field_v;
  double shift_u = 0.0;
  double shift_v = 0.0;
  double zoom = 1.0;
  double resample = 1.0;
  double noise_variance = 0.0;
  double contrast = 1.0;
  double brightness = 1.0;

  static AugmentParams identity() { return {}; }
  /// Rotation angle about the slicing axis of the given orientation.
  double inplane_angle(Orientation o) const { return rotation[slicing_axis(o)]; }
};

/// Independent uniform draws for every enabled transform (disabled ones stay
/// neutral). A width/height of zero skips the elastic field.
AugmentParams sample_params(const AugmentConfig& cfg, Rng& rng, int64_t width = 0, int64_t height = 0);

/// Smooths uniform [-1,1] noise with a Gaussian of the given sigma (kernel
/// truncated at 3 sigma, zero outside the grid) and scales it by alpha.
std::vector<float> elastic_field(int64_t width, int64_t height, double alpha, double sigma, Rng& rng);

/// Rotation, elastic warp, displacement and zoom composed into one
/// coordinate map and applied once: bilinear for the image, nearest-neighbour
/// for the label. Samples outside the slice read 0.
std::pair<Slice2D, Slice2D> apply_spatial(const Slice2D& image, const Slice2D& label, const AugmentParams& params,
                                          Orientation orientation, bool reorient_peaks = false);

/// Downsamples by lambda in (0,1] and upsamples back to the original size.
Slice2D apply_resample(const Slice2D& image, double lambda);

/// Gaussian noise, then per-channel contrast, then global brightness.
Slice2D apply_intensity(const Slice2D& image, const AugmentParams& params, Rng& rng);

/// Full per-sample pipeline in the fixed order spatial, resample, intensity.
void augment_sample(Slice2D& image, Slice2D& label, Orientation orientation, const AugmentConfig& cfg, Rng& rng);

}  // namespace wmseg::augment
