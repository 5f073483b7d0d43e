#include "wmseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wmseg/error.hpp"

namespace wmseg {

Affine identity_affine() {
  Affine a{};
  for (int i = 0; i < 4; ++i) a[i][i] = 1.0;
  return a;
}

Affine scaling_affine(const std::array<double, 3>& spacing) {
  Affine a = identity_affine();
  for (int i = 0; i < 3; ++i) a[i][i] = spacing[i];
  return a;
}

void VolumeHeader::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (dims[i] <= 0) throw ShapeError("volume dims must be positive");
    if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i])) throw ShapeError("voxel spacing must be positive");
  }
  if (channels <= 0) throw ShapeError("channel count must be positive");
  if (affine[3][0] != 0.0 || affine[3][1] != 0.0 || affine[3][2] != 0.0 || affine[3][3] != 1.0) {
    throw ShapeError("affine last row must be (0,0,0,1)");
  }
}

VolumeHeader VolumeHeader::make(const std::array<int64_t, 3>& dims, int64_t channels,
                                const std::array<double, 3>& spacing) {
  VolumeHeader h;
  h.dims = dims;
  h.channels = channels;
  h.spacing = spacing;
  h.affine = scaling_affine(spacing);
  h.validate();
  return h;
}

Volume::Volume(VolumeHeader header) : header_(header) {
  header_.validate();
  data_.assign(static_cast<size_t>(header_.value_count()), 0.0f);
}

Volume::Volume(VolumeHeader header, std::vector<float> data) : header_(header), data_(std::move(data)) {
  header_.validate();
  if (static_cast<int64_t>(data_.size()) != header_.value_count()) {
    throw ShapeError("volume data length " + std::to_string(data_.size()) + " does not match header (" +
                     std::to_string(header_.value_count()) + ")");
  }
}

std::span<const float> Volume::channel(int64_t c) const& {
  const auto n = header_.voxel_count();
  return {data_.data() + c * n, static_cast<size_t>(n)};
}

std::span<float> Volume::channel(int64_t c) & {
  const auto n = header_.voxel_count();
  return {data_.data() + c * n, static_cast<size_t>(n)};
}

Volume Volume::extract_channel(int64_t c) const {
  if (c < 0 || c >= header_.channels) throw BoundsError("channel index out of range");
  VolumeHeader h = header_;
  h.channels = 1;
  auto src = channel(c);
  return Volume(h, std::vector<float>(src.begin(), src.end()));
}

void Volume::set_channel(int64_t c, const Volume& single) {
  if (c < 0 || c >= header_.channels) throw BoundsError("channel index out of range");
  if (single.dims() != dims() || single.channels() != 1) throw ShapeError("set_channel expects a matching single-channel volume");
  std::copy(single.data().begin(), single.data().end(), channel(c).begin());
}

bool Volume::operator==(const Volume& other) const {
  return header_.dims == other.header_.dims && header_.spacing == other.header_.spacing &&
         header_.channels == other.header_.channels && header_.affine == other.header_.affine && data_ == other.data_;
}

void validate_peak_volume(const Volume& v) {
  if (v.channels() != kPeakChannels) {
    throw InputError("peak volume must have 9 channels, got " + std::to_string(v.channels()));
  }
  for (float x : v.data()) {
    if (!std::isfinite(x)) throw InputError("peak volume contains non-finite values");
  }
}

void validate_label_volume(const Volume& v) {
  for (float x : v.data()) {
    if (x != 0.0f && x != 1.0f) throw InputError("label volume must be binary");
  }
}

int slicing_axis(Orientation o) { return static_cast<int>(o); }

const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::Sagittal:
      return "sagittal";
    case Orientation::Coronal:
      return "coronal";
    case Orientation::Axial:
      return "axial";
  }
  return "?";
}

std::array<int, 2> inplane_axes(Orientation o) {
  switch (o) {
    case Orientation::Sagittal:
      return {1, 2};
    case Orientation::Coronal:
      return {0, 2};
    case Orientation::Axial:
      return {0, 1};
  }
  return {0, 1};
}

namespace {

// Strides (in elements) of the three spatial axes in channel-planar storage.
std::array<int64_t, 3> spatial_strides(const std::array<int64_t, 3>& d) { return {1, d[0], d[0] * d[1]}; }

}  // namespace

Slice2D extract_slice(const Volume& vol, Orientation o, int64_t index) {
  const int axis = slicing_axis(o);
  const auto& d = vol.dims();
  if (index < 0 || index >= d[axis]) {
    throw BoundsError(std::string("slice index ") + std::to_string(index) + " out of range for " + to_string(o));
  }
  const auto [ua, va] = inplane_axes(o);
  const auto stride = spatial_strides(d);
  Slice2D s(d[ua], d[va], vol.channels());
  const auto src = vol.data();
  const int64_t nvox = vol.header().voxel_count();
  for (int64_t c = 0; c < s.channels; ++c) {
    const float* base = src.data() + c * nvox + index * stride[axis];
    float* dst = s.data.data() + c * s.plane();
    for (int64_t v = 0; v < s.height; ++v) {
      const float* row = base + v * stride[va];
      if (stride[ua] == 1) {
        std::copy(row, row + s.width, dst + v * s.width);
      } else {
        for (int64_t u = 0; u < s.width; ++u) dst[v * s.width + u] = row[u * stride[ua]];
      }
    }
  }
  return s;
}

void insert_slice(Volume& vol, Orientation o, int64_t index, const Slice2D& slice) {
  const int axis = slicing_axis(o);
  const auto& d = vol.dims();
  if (index < 0 || index >= d[axis]) throw BoundsError("slice index out of range");
  const auto [ua, va] = inplane_axes(o);
  if (slice.width != d[ua] || slice.height != d[va] || slice.channels != vol.channels()) {
    throw ShapeError("slice shape does not match volume");
  }
  const auto stride = spatial_strides(d);
  auto dst_all = vol.data();
  const int64_t nvox = vol.header().voxel_count();
  for (int64_t c = 0; c < slice.channels; ++c) {
    float* base = dst_all.data() + c * nvox + index * stride[axis];
    const float* src = slice.data.data() + c * slice.plane();
    for (int64_t v = 0; v < slice.height; ++v) {
      float* row = base + v * stride[va];
      for (int64_t u = 0; u < slice.width; ++u) row[u * stride[ua]] = src[v * slice.width + u];
    }
  }
}

namespace {

// Number of leading and trailing all-zero slices along an axis.
std::pair<int64_t, int64_t> zero_margins(const Volume& vol, int axis) {
  const auto& d = vol.dims();
  const int64_t n = d[axis];
  std::vector<char> nonzero(static_cast<size_t>(n), 0);
  const auto data = vol.data();
  const int64_t nvox = vol.header().voxel_count();
  for (int64_t c = 0; c < vol.channels(); ++c) {
    for (int64_t z = 0; z < d[2]; ++z) {
      for (int64_t y = 0; y < d[1]; ++y) {
        const float* row = data.data() + c * nvox + d[0] * (y + d[1] * z);
        for (int64_t x = 0; x < d[0]; ++x) {
          if (row[x] != 0.0f) {
            const int64_t pos = axis == 0 ? x : (axis == 1 ? y : z);
            nonzero[static_cast<size_t>(pos)] = 1;
          }
        }
      }
    }
  }
  int64_t lo = 0;
  while (lo < n && !nonzero[static_cast<size_t>(lo)]) ++lo;
  if (lo == n) return {n, n};
  int64_t hi = 0;
  while (!nonzero[static_cast<size_t>(n - 1 - hi)]) ++hi;
  return {lo, hi};
}

}  // namespace

CropPlan plan_crop_or_pad(const Volume& vol, const std::array<int64_t, 3>& target) {
  CropPlan plan;
  plan.source_dims = vol.dims();
  plan.target_dims = target;
  for (int a = 0; a < 3; ++a) {
    if (target[a] <= 0) throw ParameterError("crop target must be positive");
    const int64_t n = plan.source_dims[a];
    const int64_t t = target[a];
    if (n == t) {
      plan.offset[a] = 0;
    } else if (n < t) {
      plan.offset[a] = -((t - n) / 2);
    } else {
      const int64_t excess = n - t;
      auto [lo_zero, hi_zero] = zero_margins(vol, a);
      if (lo_zero == n) {
        // Empty along this axis: any placement is lossless, keep it centered.
        plan.offset[a] = excess / 2;
        continue;
      }
      int64_t lo = excess / 2;
      int64_t hi = excess - lo;
      if (lo_zero + hi_zero >= excess) {
        if (lo > lo_zero) {
          hi += lo - lo_zero;
          lo = lo_zero;
        }
        if (hi > hi_zero) {
          lo += hi - hi_zero;
          hi = hi_zero;
        }
      } else {
        const int64_t rest = excess - lo_zero - hi_zero;
        lo = lo_zero + rest / 2;
        hi = hi_zero + (rest - rest / 2);
        plan.loses_content = true;
      }
      plan.offset[a] = lo;
    }
  }
  return plan;
}

namespace {

Volume place(const Volume& vol, const std::array<int64_t, 3>& out_dims, const std::array<int64_t, 3>& offset) {
  VolumeHeader h = vol.header();
  h.dims = out_dims;
  // Output voxel i sits at source voxel i + offset.
  for (int r = 0; r < 3; ++r) {
    double shift = 0.0;
    for (int c = 0; c < 3; ++c) shift += vol.header().affine[r][c] * static_cast<double>(offset[c]);
    h.affine[r][3] += shift;
  }
  Volume out(h);
  const auto& sd = vol.dims();
  const int64_t x0 = std::max<int64_t>(0, -offset[0]);
  const int64_t x1 = std::min<int64_t>(out_dims[0], sd[0] - offset[0]);
  if (x1 <= x0) return out;
  for (int64_t c = 0; c < vol.channels(); ++c) {
    for (int64_t z = 0; z < out_dims[2]; ++z) {
      const int64_t sz = z + offset[2];
      if (sz < 0 || sz >= sd[2]) continue;
      for (int64_t y = 0; y < out_dims[1]; ++y) {
        const int64_t sy = y + offset[1];
        if (sy < 0 || sy >= sd[1]) continue;
        const float* src = &vol.data()[static_cast<size_t>(vol.index(x0 + offset[0], sy, sz, c))];
        float* dst = &out.data()[static_cast<size_t>(out.index(x0, y, z, c))];
        std::copy(src, src + (x1 - x0), dst);
      }
    }
  }
  return out;
}

}  // namespace

Volume apply_crop_plan(const Volume& vol, const CropPlan& plan) {
  if (vol.dims() != plan.source_dims) throw ShapeError("crop plan does not match volume dims");
  if (plan.source_dims == plan.target_dims) return vol;
  return place(vol, plan.target_dims, plan.offset);
}

Volume crop_or_pad(const Volume& vol, const std::array<int64_t, 3>& target, bool strict) {
  const CropPlan plan = plan_crop_or_pad(vol, target);
  if (strict && plan.loses_content) throw ContentLossError("cropping would remove nonzero voxels");
  return apply_crop_plan(vol, plan);
}

Volume undo_crop(const Volume& vol, const CropPlan& plan) {
  if (vol.dims() != plan.target_dims) throw ShapeError("volume is not on the crop plan's target grid");
  if (plan.source_dims == plan.target_dims) return vol;
  std::array<int64_t, 3> inverse{-plan.offset[0], -plan.offset[1], -plan.offset[2]};
  return place(vol, plan.source_dims, inverse);
}

}  // namespace wmseg
