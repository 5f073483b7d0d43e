#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "wmseg/volume.hpp"

namespace wmseg::streamtools {

using Point = std::array<double, 3>;  // mm
using Streamline = std::vector<Point>;

struct Tractogram {
  std::vector<Streamline> streamlines;
  VolumeHeader reference;  // voxel grid for voxel <-> mm mapping

  size_t size() const { return streamlines.size(); }
};

/// Maps mm coordinates onto a header's voxel grid. Voxel centres sit at
/// integer indices; a point belongs to the voxel whose centre is nearest.
class VoxelGrid {
 public:
  explicit VoxelGrid(const VolumeHeader& header);

  Point to_voxel(const Point& mm) const;
  Point to_mm(const Point& voxel) const;
  /// Nearest voxel index, or false when the point lies outside the grid.
  bool voxel_of(const Point& mm, std::array<int64_t, 3>& ijk) const;
  /// Signed nearest-voxel coordinates without bounds checking.
  std::array<int64_t, 3> nearest(const Point& mm) const;
  bool inside(const std::array<int64_t, 3>& ijk) const;
  int64_t linear(const std::array<int64_t, 3>& ijk) const;
  const VolumeHeader& header() const { return header_; }
  double min_spacing() const;

  /// Calls f with the nearest voxel of every sample on segment a->b, taken
  /// at steps of at most half a voxel and including both endpoints.
  void for_each_segment_voxel(const Point& a, const Point& b,
                              const std::function<void(const std::array<int64_t, 3>&)>& f) const;

 private:
  VolumeHeader header_;
  Affine inverse_;
};

double arc_length(const Streamline& s);

/// k points equally spaced in arc length, endpoints kept exactly. Throws
/// GeometryError for fewer than two points, zero length or k < 2.
Streamline resample_streamline(const Streamline& s, int64_t k);

Streamline reversed(const Streamline& s);

/// Minimum of the direct and flipped mean pointwise distance between two
/// streamlines that already have the same number of points.
double mdf(const Streamline& a, const Streamline& b);

/// Resamples both streamlines to k points, then applies mdf.
double mdf(const Streamline& a, const Streamline& b, int64_t k);

struct Cluster {
  std::vector<size_t> indices;
  Streamline centroid;  // k points, running mean of flip-aligned members
};

inline constexpr int64_t kQuickBundlesPoints = 12;

/// Single-pass clustering: each streamline joins the nearest centroid when
/// its mdf is below threshold, otherwise it starts a new cluster.
std::vector<Cluster> quickbundles(const Tractogram& t, double threshold_mm, int64_t k = kQuickBundlesPoints);

/// Keeps streamlines whose cluster has at least min_size members.
Tractogram filter_small_clusters(const Tractogram& t, const std::vector<Cluster>& clusters, int64_t min_size);

/// Drops streamlines with two points less than window_mm apart (in arc
/// length) whose tangents differ by more than max_angle_deg. Tangents are
/// central differences on a 1 mm resampling.
Tractogram filter_hairpins(const Tractogram& t, double window_mm = 30.0, double max_angle_deg = 150.0);

/// Number of distinct streamlines entering each voxel of the reference grid.
Volume visitation_map(const Tractogram& t);

/// Drops streamlines that touch any voxel visited by fewer than min_count
/// streamlines.
Tractogram filter_by_density(const Tractogram& t, int64_t min_count);

/// Binary mask of every voxel a streamline passes through.
Volume streamlines_to_mask(const Tractogram& t, const VolumeHeader& header);

struct TrackingConfig {
  int64_t seeds_per_voxel = 1;
  double step_mm = 0.0;  // 0 means half the smallest voxel spacing
  double max_angle_deg = 60.0;
  double max_length_mm = 300.0;
  int64_t min_points = 3;
};

/// Optional regions both ends must reach: one endpoint in `a` and the other
/// in `b` (either way round).
struct EndpointRegions {
  const Volume* a = nullptr;
  const Volume* b = nullptr;
};

/// Deterministic peak following seeded uniformly inside every mask voxel.
/// Each seed is tracked both ways; a step is taken along the peak best
/// aligned with the current direction. Tracking stops on leaving the mask
/// (any half-voxel sample of the new segment outside it), a turn sharper
/// than max_angle_deg, a zero peak or the length limit. Throws InputError for
/// an empty mask.
Tractogram track_within_mask(const Volume& peaks, const Volume& mask, const TrackingConfig& cfg, std::mt19937_64& rng,
                             const EndpointRegions& endpoints = {});

/// MRtrix .tck files: float32 little-endian triples in mm, NaN triples
/// between streamlines and an Inf triple at the end.
void write_tck(const Tractogram& t, const std::filesystem::path& path);
Tractogram read_tck(const std::filesystem::path& path, const VolumeHeader& reference = VolumeHeader{});

}  // namespace wmseg::streamtools
