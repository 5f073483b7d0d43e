#include "wmseg/streamtools.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "wmseg/error.hpp"

namespace wmseg::streamtools {

namespace {

double dist(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double norm(const Point& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

double dot(const Point& a, const Point& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Point round_to_float(const Point& p) {
  return {static_cast<double>(static_cast<float>(p[0])), static_cast<double>(static_cast<float>(p[1])),
          static_cast<double>(static_cast<float>(p[2]))};
}

struct KeyHash {
  size_t operator()(const std::array<int64_t, 3>& k) const {
    uint64_t h = 1469598103934665603ull;
    for (auto v : k) h = (h ^ static_cast<uint64_t>(v)) * 1099511628211ull;
    return static_cast<size_t>(h);
  }
};

// Distinct voxels (unbounded) touched by a streamline, in first-visit order.
std::vector<std::array<int64_t, 3>> touched_voxels(const VoxelGrid& grid, const Streamline& s) {
  std::vector<std::array<int64_t, 3>> out;
  std::set<std::array<int64_t, 3>> seen;
  auto add = [&](const std::array<int64_t, 3>& v) {
    if (seen.insert(v).second) out.push_back(v);
  };
  if (s.size() == 1) add(grid.nearest(s[0]));
  for (size_t i = 0; i + 1 < s.size(); ++i) grid.for_each_segment_voxel(s[i], s[i + 1], add);
  return out;
}

}  // namespace

VoxelGrid::VoxelGrid(const VolumeHeader& header) : header_(header) {
  Eigen::Matrix4d a;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a(r, c) = header.affine[r][c];
  if (std::abs(a.topLeftCorner<3, 3>().determinant()) < 1e-12) throw GeometryError("singular voxel-to-mm affine");
  const Eigen::Matrix4d inv = a.inverse();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) inverse_[r][c] = inv(r, c);
}

Point VoxelGrid::to_voxel(const Point& mm) const {
  Point v{};
  for (int r = 0; r < 3; ++r) v[r] = inverse_[r][0] * mm[0] + inverse_[r][1] * mm[1] + inverse_[r][2] * mm[2] + inverse_[r][3];
  return v;
}

Point VoxelGrid::to_mm(const Point& voxel) const {
  const auto& a = header_.affine;
  Point p{};
  for (int r = 0; r < 3; ++r) p[r] = a[r][0] * voxel[0] + a[r][1] * voxel[1] + a[r][2] * voxel[2] + a[r][3];
  return p;
}

std::array<int64_t, 3> VoxelGrid::nearest(const Point& mm) const {
  const Point v = to_voxel(mm);
  return {static_cast<int64_t>(std::floor(v[0] + 0.5)), static_cast<int64_t>(std::floor(v[1] + 0.5)),
          static_cast<int64_t>(std::floor(v[2] + 0.5))};
}

bool VoxelGrid::inside(const std::array<int64_t, 3>& ijk) const {
  for (int a = 0; a < 3; ++a)
    if (ijk[a] < 0 || ijk[a] >= header_.dims[a]) return false;
  return true;
}

bool VoxelGrid::voxel_of(const Point& mm, std::array<int64_t, 3>& ijk) const {
  ijk = nearest(mm);
  return inside(ijk);
}

int64_t VoxelGrid::linear(const std::array<int64_t, 3>& ijk) const {
  return ijk[0] + header_.dims[0] * (ijk[1] + header_.dims[1] * ijk[2]);
}

double VoxelGrid::min_spacing() const { return *std::min_element(header_.spacing.begin(), header_.spacing.end()); }

void VoxelGrid::for_each_segment_voxel(const Point& a, const Point& b,
                                       const std::function<void(const std::array<int64_t, 3>&)>& f) const {
  // Sample from the lexicographically smaller endpoint so a segment yields
  // the same samples whichever way it is traversed.
  const bool swap = b < a;
  const Point va = to_voxel(swap ? b : a);
  const Point vb = to_voxel(swap ? a : b);
  const double len = dist(va, vb);
  const auto n = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(len / 0.5)));
  for (int64_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    std::array<int64_t, 3> ijk{};
    for (int k = 0; k < 3; ++k) ijk[k] = static_cast<int64_t>(std::floor(va[k] + t * (vb[k] - va[k]) + 0.5));
    f(ijk);
  }
}

double arc_length(const Streamline& s) {
  double total = 0.0;
  for (size_t i = 0; i + 1 < s.size(); ++i) total += dist(s[i], s[i + 1]);
  return total;
}

Streamline resample_streamline(const Streamline& s, int64_t k) {
  if (k < 2) throw GeometryError("resampling needs at least 2 points");
  if (s.size() < 2) throw GeometryError("streamline has fewer than 2 points");
  std::vector<double> cum(s.size(), 0.0);
  for (size_t i = 1; i < s.size(); ++i) cum[i] = cum[i - 1] + dist(s[i - 1], s[i]);
  const double total = cum.back();
  if (!(total > 0.0)) throw GeometryError("zero-length streamline");
  Streamline out(static_cast<size_t>(k));
  out.front() = s.front();
  out.back() = s.back();
  size_t seg = 0;
  for (int64_t j = 1; j + 1 < k; ++j) {
    const double target = total * static_cast<double>(j) / static_cast<double>(k - 1);
    while (seg + 2 < s.size() && cum[seg + 1] < target) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double t = span > 0.0 ? (target - cum[seg]) / span : 0.0;
    for (int a = 0; a < 3; ++a) out[static_cast<size_t>(j)][a] = s[seg][a] + t * (s[seg + 1][a] - s[seg][a]);
  }
  return out;
}

Streamline reversed(const Streamline& s) { return Streamline(s.rbegin(), s.rend()); }

double mdf(const Streamline& a, const Streamline& b) {
  if (a.size() != b.size() || a.empty()) throw GeometryError("mdf needs streamlines with equal point counts");
  const size_t k = a.size();
  // Terms i and k-1-i are added first so that swapping or reversing the
  // arguments only permutes commutative pairs and the result is bit-exact.
  double direct = 0.0, flipped = 0.0;
  for (size_t i = 0, j = k - 1; i <= j && j < k; ++i, --j) {
    if (i == j) {
      direct += dist(a[i], b[i]);
      flipped += dist(a[i], b[i]);
    } else {
      direct += dist(a[i], b[i]) + dist(a[j], b[j]);
      flipped += dist(a[i], b[j]) + dist(a[j], b[i]);
    }
  }
  return std::min(direct, flipped) / static_cast<double>(k);
}

double mdf(const Streamline& a, const Streamline& b, int64_t k) {
  return mdf(resample_streamline(a, k), resample_streamline(b, k));
}

std::vector<Cluster> quickbundles(const Tractogram& t, double threshold_mm, int64_t k) {
  if (!(threshold_mm > 0.0)) throw ParameterError("quickbundles threshold must be positive");
  std::vector<Cluster> clusters;
  std::vector<Streamline> sums;  // per-cluster sum of aligned members
  for (size_t i = 0; i < t.streamlines.size(); ++i) {
    const Streamline r = resample_streamline(t.streamlines[i], k);
    size_t best = clusters.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < clusters.size(); ++c) {
      const double d = mdf(r, clusters[c].centroid);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best < clusters.size() && best_d < threshold_mm) {
      auto& cl = clusters[best];
      double direct = 0.0, flipped = 0.0;
      for (size_t p = 0; p < r.size(); ++p) {
        direct += dist(r[p], cl.centroid[p]);
        flipped += dist(r[r.size() - 1 - p], cl.centroid[p]);
      }
      const Streamline aligned = flipped < direct ? reversed(r) : r;
      cl.indices.push_back(i);
      auto& sum = sums[best];
      const double n = static_cast<double>(cl.indices.size());
      for (size_t p = 0; p < r.size(); ++p)
        for (int a = 0; a < 3; ++a) {
          sum[p][a] += aligned[p][a];
          cl.centroid[p][a] = sum[p][a] / n;
        }
    } else {
      clusters.push_back(Cluster{{i}, r});
      sums.push_back(r);
    }
  }
  return clusters;
}

Tractogram filter_small_clusters(const Tractogram& t, const std::vector<Cluster>& clusters, int64_t min_size) {
  std::vector<bool> keep(t.streamlines.size(), false);
  for (const auto& c : clusters) {
    if (static_cast<int64_t>(c.indices.size()) < min_size) continue;
    for (size_t i : c.indices) {
      if (i >= keep.size()) throw InputError("cluster index outside the tractogram");
      keep[i] = true;
    }
  }
  Tractogram out{{}, t.reference};
  for (size_t i = 0; i < t.streamlines.size(); ++i)
    if (keep[i]) out.streamlines.push_back(t.streamlines[i]);
  return out;
}

Tractogram filter_hairpins(const Tractogram& t, double window_mm, double max_angle_deg) {
  if (!(window_mm > 0.0)) throw ParameterError("hairpin window must be positive");
  if (!(max_angle_deg > 90.0 && max_angle_deg <= 180.0)) throw ParameterError("hairpin angle must lie in (90,180]");
  const double cos_limit = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  Tractogram out{{}, t.reference};
  for (const auto& s : t.streamlines) {
    const double len = arc_length(s);
    if (s.size() < 3 || !(len > 0.0)) {
      out.streamlines.push_back(s);
      continue;
    }
    const auto k = std::max<int64_t>(3, std::llround(len) + 1);
    const Streamline r = resample_streamline(s, k);
    const double h = len / static_cast<double>(k - 1);
    std::vector<Point> tan(r.size());
    for (size_t i = 0; i < r.size(); ++i) {
      const Point& a = r[i == 0 ? 0 : i - 1];
      const Point& b = r[i + 1 == r.size() ? i : i + 1];
      Point d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
      const double n = norm(d);
      if (n > 0.0) d = {d[0] / n, d[1] / n, d[2] / n};
      tan[i] = d;
    }
    bool hairpin = false;
    for (size_t i = 0; i < tan.size() && !hairpin; ++i) {
      for (size_t j = i + 1; j < tan.size() && static_cast<double>(j - i) * h < window_mm; ++j) {
        if (dot(tan[i], tan[j]) < cos_limit) {
          hairpin = true;
          break;
        }
      }
    }
    if (!hairpin) out.streamlines.push_back(s);
  }
  return out;
}

Volume visitation_map(const Tractogram& t) {
  const VoxelGrid grid(t.reference);
  VolumeHeader h = t.reference;
  h.channels = 1;
  Volume out(h);
  for (const auto& s : t.streamlines)
    for (const auto& v : touched_voxels(grid, s))
      if (grid.inside(v)) out.data()[static_cast<size_t>(grid.linear(v))] += 1.0f;
  return out;
}

Tractogram filter_by_density(const Tractogram& t, int64_t min_count) {
  if (min_count < 1) throw ParameterError("min_count must be at least 1");
  const VoxelGrid grid(t.reference);
  std::vector<std::vector<std::array<int64_t, 3>>> visits;
  std::unordered_map<std::array<int64_t, 3>, int64_t, KeyHash> counts;
  for (const auto& s : t.streamlines) {
    visits.push_back(touched_voxels(grid, s));
    for (const auto& v : visits.back()) ++counts[v];
  }
  Tractogram out{{}, t.reference};
  for (size_t i = 0; i < t.streamlines.size(); ++i) {
    const bool dense = std::all_of(visits[i].begin(), visits[i].end(), [&](const auto& v) { return counts[v] >= min_count; });
    if (dense) out.streamlines.push_back(t.streamlines[i]);
  }
  return out;
}

Volume streamlines_to_mask(const Tractogram& t, const VolumeHeader& header) {
  const VoxelGrid grid(header);
  VolumeHeader h = header;
  h.channels = 1;
  Volume out(h);
  auto mark = [&](const std::array<int64_t, 3>& v) {
    if (grid.inside(v)) out.data()[static_cast<size_t>(grid.linear(v))] = 1.0f;
  };
  for (const auto& s : t.streamlines) {
    if (s.size() == 1) mark(grid.nearest(s[0]));
    for (size_t i = 0; i + 1 < s.size(); ++i) grid.for_each_segment_voxel(s[i], s[i + 1], mark);
  }
  return out;
}

namespace {

class Tracker {
 public:
  Tracker(const Volume& peaks, const Volume& mask, const TrackingConfig& cfg)
      : peaks_(peaks), mask_(mask), grid_(mask.header()), cfg_(cfg) {
    step_ = cfg.step_mm > 0.0 ? cfg.step_mm : 0.5 * grid_.min_spacing();
    cos_limit_ = std::cos(cfg.max_angle_deg * std::numbers::pi / 180.0);
    max_steps_ = static_cast<int64_t>(std::floor(cfg.max_length_mm / step_ + 1e-9));
  }

  bool in_mask(const std::array<int64_t, 3>& v) const {
    return grid_.inside(v) && mask_.data()[static_cast<size_t>(grid_.linear(v))] != 0.0f;
  }

  // Unit peak at voxel v best aligned with dir, sign-matched; false if none.
  bool aligned_peak(const std::array<int64_t, 3>& v, const Point& dir, Point& out) const {
    double best = -1.0;
    for (int p = 0; p < 3; ++p) {
      Point q{peaks_.at(v[0], v[1], v[2], 3 * p), peaks_.at(v[0], v[1], v[2], 3 * p + 1),
              peaks_.at(v[0], v[1], v[2], 3 * p + 2)};
      const double n = norm(q);
      if (!(n > 0.0)) continue;
      q = {q[0] / n, q[1] / n, q[2] / n};
      double d = dot(q, dir);
      if (d < 0) {
        q = {-q[0], -q[1], -q[2]};
        d = -d;
      }
      if (d > best) {
        best = d;
        out = q;
      }
    }
    return best >= 0.0;
  }

  bool strongest_peak(const std::array<int64_t, 3>& v, Point& out) const {
    double best = 0.0;
    for (int p = 0; p < 3; ++p) {
      const Point q{peaks_.at(v[0], v[1], v[2], 3 * p), peaks_.at(v[0], v[1], v[2], 3 * p + 1),
                    peaks_.at(v[0], v[1], v[2], 3 * p + 2)};
      const double n = norm(q);
      if (n > best) {
        best = n;
        out = {q[0] / n, q[1] / n, q[2] / n};
      }
    }
    return best > 0.0;
  }

  bool segment_in_mask(const Point& a, const Point& b) const {
    bool ok = true;
    grid_.for_each_segment_voxel(a, b, [&](const std::array<int64_t, 3>& v) { ok = ok && in_mask(v); });
    return ok;
  }

  Streamline follow(Point p, Point dir, int64_t budget) const {
    Streamline pts;
    for (int64_t n = 0; n < budget; ++n) {
      Point next_dir{};
      if (!aligned_peak(grid_.nearest(p), dir, next_dir)) break;
      if (dot(next_dir, dir) < cos_limit_) break;
      const Point q = round_to_float({p[0] + step_ * next_dir[0], p[1] + step_ * next_dir[1], p[2] + step_ * next_dir[2]});
      if (!segment_in_mask(p, q)) break;
      pts.push_back(q);
      p = q;
      dir = next_dir;
    }
    return pts;
  }

  const VoxelGrid& grid() const { return grid_; }
  int64_t max_steps() const { return max_steps_; }

 private:
  const Volume& peaks_;
  const Volume& mask_;
  VoxelGrid grid_;
  TrackingConfig cfg_;
  double step_ = 0.5;
  double cos_limit_ = 0.5;
  int64_t max_steps_ = 0;
};

bool endpoint_in(const VoxelGrid& grid, const Volume* region, const Point& p) {
  std::array<int64_t, 3> v{};
  return grid.voxel_of(p, v) && region->data()[static_cast<size_t>(grid.linear(v))] != 0.0f;
}

}  // namespace

Tractogram track_within_mask(const Volume& peaks, const Volume& mask, const TrackingConfig& cfg, std::mt19937_64& rng,
                             const EndpointRegions& endpoints) {
  validate_peak_volume(peaks);
  if (peaks.dims() != mask.dims()) throw ShapeError("peaks and mask grids differ");
  if (mask.channels() != 1) throw ShapeError("tracking mask must have a single channel");
  if (cfg.seeds_per_voxel < 1) throw ParameterError("seeds_per_voxel must be positive");
  if (cfg.step_mm < 0.0) throw ParameterError("step must be positive");
  if (!(cfg.max_angle_deg > 0.0 && cfg.max_angle_deg <= 180.0)) throw ParameterError("max angle must lie in (0,180]");
  if (!(cfg.max_length_mm > 0.0)) throw ParameterError("max length must be positive");
  for (const Volume* r : {endpoints.a, endpoints.b}) {
    if (r && r->dims() != mask.dims()) throw ShapeError("endpoint region grid differs from the mask");
  }
  if (std::none_of(mask.data().begin(), mask.data().end(), [](float v) { return v != 0.0f; })) {
    throw InputError("tracking mask is empty");
  }

  Tracker tracker(peaks, mask, cfg);
  const VoxelGrid& grid = tracker.grid();
  Tractogram out{{}, mask.header()};
  out.reference.channels = 1;
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  const auto& d = mask.dims();
  for (int64_t z = 0; z < d[2]; ++z)
    for (int64_t y = 0; y < d[1]; ++y)
      for (int64_t x = 0; x < d[0]; ++x) {
        if (mask.at(x, y, z) == 0.0f) continue;
        for (int64_t s = 0; s < cfg.seeds_per_voxel; ++s) {
          const Point jv{x + jitter(rng), y + jitter(rng), z + jitter(rng)};
          const Point seed = round_to_float(grid.to_mm(jv));
          const auto sv = grid.nearest(seed);
          if (!tracker.in_mask(sv)) continue;
          Point dir{};
          if (!tracker.strongest_peak(sv, dir)) continue;
          const Streamline fwd = tracker.follow(seed, dir, tracker.max_steps());
          const auto left = tracker.max_steps() - static_cast<int64_t>(fwd.size());
          const Streamline back = tracker.follow(seed, {-dir[0], -dir[1], -dir[2]}, left);
          Streamline line(back.rbegin(), back.rend());
          line.push_back(seed);
          line.insert(line.end(), fwd.begin(), fwd.end());
          if (static_cast<int64_t>(line.size()) < cfg.min_points) continue;
          if (endpoints.a || endpoints.b) {
            const Volume* a = endpoints.a ? endpoints.a : endpoints.b;
            const Volume* b = endpoints.b ? endpoints.b : endpoints.a;
            const bool ok = (endpoint_in(grid, a, line.front()) && endpoint_in(grid, b, line.back())) ||
                            (endpoint_in(grid, b, line.front()) && endpoint_in(grid, a, line.back()));
            if (!ok) continue;
          }
          out.streamlines.push_back(std::move(line));
        }
      }
  return out;
}

void write_tck(const Tractogram& t, const std::filesystem::path& path) {
  auto header_for = [&](size_t offset) {
    std::ostringstream os;
    os << "mrtrix tracks\ncount: " << t.streamlines.size() << "\ndatatype: Float32LE\nfile: . " << offset
       << "\nEND\n";
    return os.str();
  };
  size_t offset = header_for(0).size();
  std::string header = header_for(offset);
  while (header.size() != offset) {
    offset = header.size();
    header = header_for(offset);
  }
  std::vector<float> data;
  for (const auto& s : t.streamlines) {
    for (const auto& p : s) {
      for (double c : p) {
        if (!std::isfinite(c)) throw InputError("streamline points must be finite");
        data.push_back(static_cast<float>(c));
      }
    }
    for (int i = 0; i < 3; ++i) data.push_back(std::numeric_limits<float>::quiet_NaN());
  }
  for (int i = 0; i < 3; ++i) data.push_back(std::numeric_limits<float>::infinity());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path.string());
}

Tractogram read_tck(const std::filesystem::path& path, const VolumeHeader& reference) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  if (bytes.rfind("mrtrix tracks\n", 0) != 0) throw FormatError(path.string() + " is not an MRtrix track file");
  std::map<std::string, std::string> fields;
  size_t pos = std::strlen("mrtrix tracks\n");
  bool ended = false;
  while (pos < bytes.size()) {
    const size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) break;
    const std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    if (line == "END") {
      ended = true;
      break;
    }
    const size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string value = line.substr(colon + 1);
    value.erase(0, value.find_first_not_of(' '));
    fields[line.substr(0, colon)] = value;
  }
  if (!ended) throw FormatError("track file header is not terminated by END");
  if (fields["datatype"] != "Float32LE") throw UnsupportedError("track datatype '" + fields["datatype"] + "' is not supported");
  std::istringstream fs(fields["file"]);
  std::string dot;
  size_t offset = 0;
  if (!(fs >> dot >> offset) || dot != "." || offset < pos || offset > bytes.size()) {
    throw FormatError("track file has a bad 'file:' entry");
  }
  Tractogram t{{}, reference};
  Streamline current;
  const size_t n = (bytes.size() - offset) / (3 * sizeof(float));
  bool terminated = false;
  for (size_t i = 0; i < n; ++i) {
    float xyz[3];
    std::memcpy(xyz, bytes.data() + offset + i * 3 * sizeof(float), sizeof xyz);
    if (std::isinf(xyz[0]) && std::isinf(xyz[1]) && std::isinf(xyz[2])) {
      terminated = true;
      break;
    }
    if (std::isnan(xyz[0]) && std::isnan(xyz[1]) && std::isnan(xyz[2])) {
      t.streamlines.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (!std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) || !std::isfinite(xyz[2])) {
      throw FormatError("track file contains a partial delimiter");
    }
    current.push_back({xyz[0], xyz[1], xyz[2]});
  }
  if (!terminated) throw FormatError("track file is truncated");
  if (!current.empty()) t.streamlines.push_back(std::move(current));
  return t;
}

}  // namespace wmseg::streamtools
