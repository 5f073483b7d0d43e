#include "wmseg/postprocess.hpp"

#include <array>
#include <cstdlib>

#include "wmseg/error.hpp"

namespace wmseg::postprocess {

namespace {

void check_theta(double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("threshold must lie in (0,1)");
}

std::vector<std::array<int, 3>> neighbour_offsets(Connectivity conn) {
  const int limit = static_cast<int>(conn) == 6 ? 1 : static_cast<int>(conn) == 18 ? 2 : 3;
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 > 0 && l1 <= limit) out.push_back({dx, dy, dz});
      }
  return out;
}

void keep_largest(std::span<float> channel, const std::array<int64_t, 3>& d,
                  const std::vector<std::array<int, 3>>& offsets) {
  const int64_t n = d[0] * d[1] * d[2];
  std::vector<int32_t> label(static_cast<size_t>(n), -1);
  std::vector<int64_t> queue;
  int32_t best = -1;
  int64_t best_size = 0;
  int32_t next = 0;
  for (int64_t seed = 0; seed < n; ++seed) {
    if (channel[seed] == 0.0f || label[seed] >= 0) continue;
    const int32_t id = next++;
    label[seed] = id;
    queue.assign(1, seed);
    for (size_t head = 0; head < queue.size(); ++head) {
      const int64_t i = queue[head];
      const int64_t x = i % d[0];
      const int64_t y = (i / d[0]) % d[1];
      const int64_t z = i / (d[0] * d[1]);
      for (const auto& o : offsets) {
        const int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2]) continue;
        const int64_t j = nx + d[0] * (ny + d[1] * nz);
        if (channel[j] == 0.0f || label[j] >= 0) continue;
        label[j] = id;
        queue.push_back(j);
      }
    }
    // Components are discovered in order of their smallest index, so a
    // strict comparison keeps the earliest on ties.
    if (static_cast<int64_t>(queue.size()) > best_size) {
      best_size = static_cast<int64_t>(queue.size());
      best = id;
    }
  }
  for (int64_t i = 0; i < n; ++i) channel[i] = (label[i] == best && best >= 0) ? 1.0f : 0.0f;
}

}  // namespace

Connectivity connectivity_from_int(int n) {
  switch (n) {
    case 6:
      return Connectivity::Faces;
    case 18:
      return Connectivity::Edges;
    case 26:
      return Connectivity::Corners;
    default:
      throw ParameterError("connectivity must be 6, 18 or 26");
  }
}

std::vector<double> ThresholdTable::resolve(const std::vector<std::string>& tracts) const {
  check_theta(default_theta);
  std::vector<double> out(tracts.size(), default_theta);
  for (const auto& [name, theta] : per_tract) {
    check_theta(theta);
    bool found = false;
    for (size_t i = 0; i < tracts.size(); ++i) {
      if (tracts[i] == name) {
        out[i] = theta;
        found = true;
      }
    }
    if (!found) throw ParameterError("threshold override for unknown tract " + name);
  }
  return out;
}

Volume binarize(const Volume& probs, double theta) {
  return binarize(probs, std::vector<double>(static_cast<size_t>(probs.channels()), theta));
}

Volume binarize(const Volume& probs, const std::vector<double>& per_channel_theta) {
  if (static_cast<int64_t>(per_channel_theta.size()) != probs.channels()) {
    throw ParameterError("need one threshold per channel");
  }
  Volume out(probs.header());
  for (int64_t c = 0; c < probs.channels(); ++c) {
    const double theta = per_channel_theta[static_cast<size_t>(c)];
    check_theta(theta);
    const auto src = probs.channel(c);
    auto dst = out.channel(c);
    for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= theta ? 1.0f : 0.0f;
  }
  return out;
}

Volume largest_component(const Volume& mask, Connectivity conn) {
  Volume out = mask;
  const auto offsets = neighbour_offsets(conn);
  for (int64_t c = 0; c < mask.channels(); ++c) keep_largest(out.channel(c), mask.dims(), offsets);
  return out;
}

Volume finalize(const Volume& probs, const std::vector<double>& per_channel_theta, Connectivity conn) {
  return largest_component(binarize(probs, per_channel_theta), conn);
}

}  // namespace wmseg::postprocess
