#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace wmseg {

using Affine = std::array<std::array<double, 4>, 4>;

Affine identity_affine();
Affine scaling_affine(const std::array<double, 3>& spacing);

struct VolumeHeader {
  std::array<int64_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  int64_t channels = 1;
  Affine affine = identity_affine();

  int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  int64_t value_count() const { return voxel_count() * channels; }

  /// Throws ShapeError if dims/spacing/channels/affine are invalid.
  void validate() const;

  static VolumeHeader make(const std::array<int64_t, 3>& dims, int64_t channels,
                           const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

  bool same_grid(const VolumeHeader& other) const { return dims == other.dims; }
};

/// A 3D multi-channel grid. Storage is NIfTI order: x fastest, then y, z,
/// and channel slowest, i.e. index = x + X*(y + Y*(z + Z*c)).
class Volume {
 public:
  Volume() = default;
  explicit Volume(VolumeHeader header);
  Volume(VolumeHeader header, std::vector<float> data);

  const VolumeHeader& header() const { return header_; }
  VolumeHeader& header() { return header_; }
  const std::array<int64_t, 3>& dims() const { return header_.dims; }
  int64_t channels() const { return header_.channels; }

  // Views into storage; deleted on temporaries so they cannot dangle.
  std::span<const float> data() const& { return data_; }
  std::span<float> data() & { return data_; }
  std::span<const float> data() const&& = delete;
  std::vector<float>& storage() { return data_; }

  int64_t index(int64_t x, int64_t y, int64_t z, int64_t c = 0) const {
    const auto& d = header_.dims;
    return x + d[0] * (y + d[1] * (z + d[2] * c));
  }
  float at(int64_t x, int64_t y, int64_t z, int64_t c = 0) const { return data_[index(x, y, z, c)]; }
  float& at(int64_t x, int64_t y, int64_t z, int64_t c = 0) { return data_[index(x, y, z, c)]; }

  std::span<const float> channel(int64_t c) const&;
  std::span<float> channel(int64_t c) &;
  std::span<const float> channel(int64_t c) const&& = delete;

  /// Single-channel copy of channel c.
  Volume extract_channel(int64_t c) const;
  void set_channel(int64_t c, const Volume& single);

  bool operator==(const Volume& other) const;

 private:
  VolumeHeader header_;
  std::vector<float> data_;
};

// Peak volumes carry 9 channels: (p1x,p1y,p1z,p2x,p2y,p2z,p3x,p3y,p3z).
inline constexpr int64_t kPeakChannels = 9;

/// Throws InputError unless the volume has 9 finite channels.
void validate_peak_volume(const Volume& v);

/// Throws InputError unless every value is exactly 0 or 1.
void validate_label_volume(const Volume& v);

enum class Orientation { Sagittal = 0, Coronal = 1, Axial = 2 };

inline constexpr std::array<Orientation, 3> kOrientations{Orientation::Sagittal, Orientation::Coronal,
                                                          Orientation::Axial};

int slicing_axis(Orientation o);
const char* to_string(Orientation o);

/// In-plane axes (first, second) remaining after removing the slicing axis.
std::array<int, 2> inplane_axes(Orientation o);

/// A 2D multi-channel image. Index = u + width*(v + height*c) where u runs
/// along the first remaining volume axis and v along the second one.
struct Slice2D {
  int64_t width = 0;
  int64_t height = 0;
  int64_t channels = 0;
  std::vector<float> data;

  Slice2D() = default;
  Slice2D(int64_t w, int64_t h, int64_t c) : width(w), height(h), channels(c), data(w * h * c, 0.0f) {}

  int64_t plane() const { return width * height; }
  float at(int64_t u, int64_t v, int64_t c) const { return data[u + width * (v + height * c)]; }
  float& at(int64_t u, int64_t v, int64_t c) { return data[u + width * (v + height * c)]; }
  std::span<const float> channel(int64_t c) const { return {data.data() + c * plane(), static_cast<size_t>(plane())}; }
  std::span<float> channel(int64_t c) { return {data.data() + c * plane(), static_cast<size_t>(plane())}; }
};

Slice2D extract_slice(const Volume& vol, Orientation o, int64_t index);

/// Writes a slice back into the volume; channels of the slice must match.
void insert_slice(Volume& vol, Orientation o, int64_t index, const Slice2D& slice);

/// Per-axis placement of a source grid inside a target grid. For axis a,
/// target voxel i maps to source voxel i + offset[a].
struct CropPlan {
  std::array<int64_t, 3> source_dims{};
  std::array<int64_t, 3> target_dims{};
  std::array<int64_t, 3> offset{};
  bool loses_content = false;
};

CropPlan plan_crop_or_pad(const Volume& vol, const std::array<int64_t, 3>& target);
Volume apply_crop_plan(const Volume& vol, const CropPlan& plan);

/// Crops (trimming all-zero border slices first, then centering) or
/// zero-pads to the target dims. In strict mode losing a nonzero voxel
/// raises ContentLossError.
Volume crop_or_pad(const Volume& vol, const std::array<int64_t, 3>& target, bool strict = false);

/// Maps a volume on the plan's target grid back onto the source grid.
Volume undo_crop(const Volume& vol, const CropPlan& plan);

}  // namespace wmseg
