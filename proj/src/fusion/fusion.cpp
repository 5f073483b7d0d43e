#include "wmseg/fusion.hpp"

#include <algorithm>
#include <array>

#include "wmseg/error.hpp"

namespace wmseg::fusion {

namespace {

void require_stacked(const Volume& stacked) {
  if (stacked.channels() % 3 != 0 || stacked.channels() == 0) {
    throw ShapeError("stacked predictions need a multiple of 3 channels, got " + std::to_string(stacked.channels()));
  }
}

VolumeHeader with_channels(const VolumeHeader& h, int64_t channels) {
  VolumeHeader out = h;
  out.channels = channels;
  return out;
}

// Voxel (x,y,z) of in-plane position (u,v) on slice i of orientation o.
std::array<int64_t, 3> voxel_of(Orientation o, int64_t i, int64_t u, int64_t v) {
  switch (o) {
    case Orientation::Sagittal:
      return {i, u, v};
    case Orientation::Coronal:
      return {u, i, v};
    case Orientation::Axial:
      break;
  }
  return {u, v, i};
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "mean") return Strategy::Mean;
  if (name == "majority") return Strategy::Majority;
  if (name == "fcnn") return Strategy::Fcnn;
  throw ParameterError("unknown fusion strategy '" + name + "' (expected mean, majority or fcnn)");
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Mean:
      return "mean";
    case Strategy::Majority:
      return "majority";
    case Strategy::Fcnn:
      return "fcnn";
  }
  return "?";
}

Volume predict_orientations(const nn::UNet<float>& model, const Volume& input, int64_t batch_size) {
  const auto& cfg = model.config();
  const int64_t s = cfg.input_size;
  if (input.dims() != std::array<int64_t, 3>{s, s, s}) {
    throw ShapeError("input must be cropped to " + std::to_string(s) + "^3 before prediction");
  }
  if (input.channels() != cfg.in_channels) {
    throw ShapeError("input has " + std::to_string(input.channels()) + " channels, model expects " +
                     std::to_string(cfg.in_channels));
  }
  if (batch_size < 1) throw ParameterError("batch size must be positive");
  const int64_t k = cfg.out_channels;
  Volume stacked(with_channels(input.header(), 3 * k));
  // Slices are written straight into the stacked volume so that only one
  // 3K-channel buffer is ever held.
  for (auto o : kOrientations) {
    for (int64_t first = 0; first < s; first += batch_size) {
      const int64_t last = std::min(s, first + batch_size);
      std::vector<Slice2D> slices;
      for (int64_t i = first; i < last; ++i) slices.push_back(extract_slice(input, o, i));
      const nn::Tensor<float> y = model.predict(nn::slices_to_tensor(slices));
      const auto out = y.values();
      for (int64_t n = 0; n < last - first; ++n) {
        for (int64_t t = 0; t < k; ++t) {
          const float* plane = out.data() + ((n * k + t) * s * s);
          const int64_t ch = stacked_channel(t, o);
          for (int64_t v = 0; v < s; ++v) {
            for (int64_t u = 0; u < s; ++u) {
              const auto p = voxel_of(o, first + n, u, v);
              stacked.at(p[0], p[1], p[2], ch) = plane[v * s + u];
            }
          }
        }
      }
    }
  }
  return stacked;
}

Volume fuse_mean(const Volume& stacked) {
  require_stacked(stacked);
  const int64_t k = stacked.channels() / 3;
  Volume out(with_channels(stacked.header(), k));
  const int64_t nv = stacked.header().voxel_count();
  for (int64_t t = 0; t < k; ++t) {
    const auto a = stacked.channel(3 * t);
    const auto b = stacked.channel(3 * t + 1);
    const auto c = stacked.channel(3 * t + 2);
    auto o = out.channel(t);
    for (int64_t i = 0; i < nv; ++i) {
      // Exact in double, so equal inputs come back unchanged.
      const double sum = static_cast<double>(a[i]) + static_cast<double>(b[i]) + static_cast<double>(c[i]);
      o[i] = static_cast<float>(sum / 3.0);
    }
  }
  return out;
}

Volume fuse_majority(const Volume& stacked, double theta) {
  require_stacked(stacked);
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("threshold must lie in (0,1)");
  const int64_t k = stacked.channels() / 3;
  Volume out(with_channels(stacked.header(), k));
  const int64_t nv = stacked.header().voxel_count();
  for (int64_t t = 0; t < k; ++t) {
    const auto a = stacked.channel(3 * t);
    const auto b = stacked.channel(3 * t + 1);
    const auto c = stacked.channel(3 * t + 2);
    auto o = out.channel(t);
    for (int64_t i = 0; i < nv; ++i) {
      const int votes = (a[i] >= theta) + (b[i] >= theta) + (c[i] >= theta);
      o[i] = votes >= 2 ? 1.0f : 0.0f;
    }
  }
  return out;
}

Volume fuse_fcnn(const nn::UNet<float>& fusion_model, const Volume& stacked, int64_t batch_size) {
  require_stacked(stacked);
  const auto& cfg = fusion_model.config();
  if (cfg.in_channels != stacked.channels()) {
    throw ShapeError("fusion model expects " + std::to_string(cfg.in_channels) + " channels, stacked volume has " +
                     std::to_string(stacked.channels()));
  }
  if (cfg.out_channels * 3 != stacked.channels()) throw ShapeError("fusion model must output one channel per tract");
  std::array<Volume, 3> per;
  for (auto o : kOrientations) per[static_cast<size_t>(o)] = nn::predict_orientation(fusion_model, stacked, o, batch_size);
  Volume out(with_channels(stacked.header(), cfg.out_channels));
  auto dst = out.data();
  const auto a = per[0].data();
  const auto b = per[1].data();
  const auto c = per[2].data();
  for (size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<float>((static_cast<double>(a[i]) + static_cast<double>(b[i]) + static_cast<double>(c[i])) / 3.0);
  }
  return out;
}

}  // namespace wmseg::fusion
