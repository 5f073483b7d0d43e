#include "wmseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "wmseg/error.hpp"
#include "wmseg/nifti.hpp"

namespace wmseg::phantom {

namespace {

using Rng = std::mt19937_64;

Rng derived_rng(uint64_t seed, uint64_t subject, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(subject),
                    static_cast<uint32_t>(subject >> 32), static_cast<uint32_t>(stream)};
  return Rng(seq);
}

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  Vec3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = 0.5 * (2.0 * p1[a] + (p2[a] - p0[a]) * t + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * t2 +
                    (3.0 * p1[a] - p0[a] - 3.0 * p2[a] + p3[a]) * t3);
  }
  return out;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  Mat3 r{};
  r[axis][axis] = 1.0;
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

std::vector<Vec3> jittered(const std::vector<Vec3>& points, const PhantomConfig& cfg, Rng& rng) {
  const double rad = cfg.jitter_rotation_deg * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> angle(-rad, rad);
  std::uniform_real_distribution<double> scale(1.0 - cfg.jitter_scale, 1.0 + cfg.jitter_scale);
  std::uniform_real_distribution<double> shift(-cfg.jitter_translation, cfg.jitter_translation);
  const double ax = angle(rng), ay = angle(rng), az = angle(rng);
  const Mat3 r = mul(rotation(2, az), mul(rotation(1, ay), rotation(0, ax)));
  const double s = scale(rng);
  const Vec3 t{shift(rng), shift(rng), shift(rng)};
  const double c = (static_cast<double>(cfg.grid) - 1.0) / 2.0;
  std::vector<Vec3> out;
  for (const auto& p : points) {
    const Vec3 d{p[0] - c, p[1] - c, p[2] - c};
    Vec3 q{};
    for (int i = 0; i < 3; ++i) q[i] = c + s * (r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]) + t[i];
    out.push_back(q);
  }
  return out;
}

// Distance from every voxel to the tube centreline (infinity outside the
// tube) and the unit tangent of the nearest centreline segment.
struct TubeField {
  std::vector<float> dist;
  std::vector<int32_t> segment;
  std::vector<Vec3> tangents;
};

TubeField render_tube(const std::vector<Vec3>& samples, double radius, int64_t n) {
  TubeField f;
  const auto count = static_cast<size_t>(n * n * n);
  f.dist.assign(count, std::numeric_limits<float>::infinity());
  f.segment.assign(count, -1);
  std::vector<double> best(count, std::numeric_limits<double>::infinity());
  for (size_t s = 0; s + 1 < samples.size(); ++s) {
    const Vec3& a = samples[s];
    const Vec3& b = samples[s + 1];
    const Vec3 ab = sub(b, a);
    const double len2 = dot(ab, ab);
    const double len = std::sqrt(len2);
    f.tangents.push_back(len > 0 ? Vec3{ab[0] / len, ab[1] / len, ab[2] / len} : Vec3{1, 0, 0});
    if (!(len2 > 0.0)) continue;
    std::array<int64_t, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(a[k], b[k]) - radius)));
      hi[k] = std::min<int64_t>(n - 1, static_cast<int64_t>(std::ceil(std::max(a[k], b[k]) + radius)));
    }
    for (int64_t z = lo[2]; z <= hi[2]; ++z)
      for (int64_t y = lo[1]; y <= hi[1]; ++y)
        for (int64_t x = lo[0]; x <= hi[0]; ++x) {
          const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
          const Vec3 ap = sub(p, a);
          const double t = std::clamp(dot(ap, ab) / len2, 0.0, 1.0);
          const Vec3 d{ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]};
          const double dd = norm(d);
          const auto i = static_cast<size_t>(x + n * (y + n * z));
          if (dd <= radius && dd < best[i]) {
            best[i] = dd;
            f.dist[i] = static_cast<float>(dd);
            f.segment[i] = static_cast<int32_t>(s);
          }
        }
  }
  return f;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) f << l << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

void PhantomConfig::validate() const {
  if (grid < 8) throw ConfigError("phantom grid must be at least 8");
  if (!(spacing > 0.0)) throw ConfigError("phantom spacing must be positive");
  if (bundles.empty()) throw ConfigError("phantom needs at least one bundle");
  for (const auto& b : bundles) {
    if (b.control_points.size() < 2) throw ConfigError("bundle " + b.name + " needs at least two control points");
    if (!(b.radius > 0.0)) throw ConfigError("bundle " + b.name + " needs a positive radius");
  }
  if (!(noise >= 0.0)) throw ConfigError("peak noise must be non-negative");
  if (variants < 1) throw ConfigError("need at least one peak variant");
  if (!(jitter_translation >= 0.0 && jitter_rotation_deg >= 0.0 && jitter_scale >= 0.0 && jitter_scale < 1.0)) {
    throw ConfigError("jitter magnitudes must be non-negative");
  }
}

std::vector<std::string> PhantomConfig::tract_names() const {
  std::vector<std::string> out;
  for (const auto& b : bundles) out.push_back(b.name);
  return out;
}

std::vector<BundleSpec> default_bundles(int64_t grid) {
  const double m = static_cast<double>(grid) - 1.0;
  const double r = 0.05 * static_cast<double>(grid);
  auto at = [m](std::initializer_list<std::array<double, 3>> fractions) {
    std::vector<Vec3> out;
    for (const auto& f : fractions) out.push_back({f[0] * m, f[1] * m, f[2] * m});
    return out;
  };
  return {
      {"straight_x", at({{0.12, 0.35, 0.5}, {0.88, 0.35, 0.5}}), r},
      {"straight_z", at({{0.8, 0.75, 0.12}, {0.8, 0.75, 0.88}}), r},
      {"curved_xy", at({{0.15, 0.15, 0.2}, {0.45, 0.3, 0.2}, {0.65, 0.55, 0.2}, {0.7, 0.85, 0.2}}), r},
      {"curved_xz", at({{0.15, 0.6, 0.85}, {0.35, 0.6, 0.7}, {0.55, 0.6, 0.8}, {0.75, 0.6, 0.65}, {0.85, 0.6, 0.75}}), r},
      {"crossing_y", at({{0.5, 0.12, 0.5}, {0.5, 0.88, 0.5}}), r},
  };
}

PhantomConfig default_config(int64_t grid) {
  PhantomConfig c;
  c.grid = grid;
  c.bundles = default_bundles(grid);
  c.jitter_rotation_deg = 2.0;
  c.jitter_scale = 0.02;
  return c;
}

std::vector<Vec3> sample_centreline(const std::vector<Vec3>& cp) {
  if (cp.size() < 2) throw ConfigError("centreline needs at least two control points");
  const size_t m = cp.size();
  auto point = [&](int64_t i) -> Vec3 {
    if (i < 0) return {2 * cp[0][0] - cp[1][0], 2 * cp[0][1] - cp[1][1], 2 * cp[0][2] - cp[1][2]};
    if (i >= static_cast<int64_t>(m))
      return {2 * cp[m - 1][0] - cp[m - 2][0], 2 * cp[m - 1][1] - cp[m - 2][1], 2 * cp[m - 1][2] - cp[m - 2][2]};
    return cp[static_cast<size_t>(i)];
  };
  std::vector<Vec3> out;
  for (int64_t i = 0; i + 1 < static_cast<int64_t>(m); ++i) {
    // Catmull-Rom segments are at most ~1.5x their chord.
    const double chord = norm(sub(point(i + 1), point(i)));
    const auto steps = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(chord * 1.5 * 4.0)));
    for (int64_t j = 0; j < steps; ++j) {
      out.push_back(catmull_rom(point(i - 1), point(i), point(i + 1), point(i + 2),
                                static_cast<double>(j) / static_cast<double>(steps)));
    }
  }
  out.push_back(cp.back());
  return out;
}

Subject generate_subject(const PhantomConfig& cfg, uint64_t subject_index) {
  cfg.validate();
  const int64_t n = cfg.grid;
  const int64_t k = cfg.tract_count();
  Rng rng = derived_rng(cfg.seed, subject_index, 0);

  std::vector<TubeField> fields;
  for (const auto& b : cfg.bundles) {
    const auto samples = sample_centreline(jittered(b.control_points, cfg, rng));
    for (const auto& p : samples)
      for (int a = 0; a < 3; ++a)
        if (p[a] < b.radius || p[a] > static_cast<double>(n - 1) - b.radius) {
          throw ConfigError("bundle " + b.name + " leaves the phantom grid");
        }
    fields.push_back(render_tube(samples, b.radius, n));
  }

  const auto spacing = std::array<double, 3>{cfg.spacing, cfg.spacing, cfg.spacing};
  Subject s{{}, Volume(VolumeHeader::make({n, n, n}, k, spacing))};
  Volume clean(VolumeHeader::make({n, n, n}, 9, spacing));
  const int64_t voxels = n * n * n;
  for (int64_t i = 0; i < voxels; ++i) {
    int slot = 0;
    for (int64_t b = 0; b < k; ++b) {
      const auto& f = fields[static_cast<size_t>(b)];
      if (f.segment[static_cast<size_t>(i)] < 0) continue;
      s.labels.storage()[static_cast<size_t>(i + voxels * b)] = 1.0f;
      if (slot >= 3) continue;
      const Vec3& t = f.tangents[static_cast<size_t>(f.segment[static_cast<size_t>(i)])];
      for (int a = 0; a < 3; ++a) clean.storage()[static_cast<size_t>(i + voxels * (3 * slot + a))] = static_cast<float>(t[a]);
      ++slot;
    }
  }

  for (int64_t v = 0; v < cfg.variants; ++v) {
    Volume peaks = clean;
    const double sigma = cfg.noise * static_cast<double>(1 + v);
    if (sigma > 0.0) {
      Rng noise_rng = derived_rng(cfg.seed, subject_index, static_cast<uint64_t>(1 + v));
      std::normal_distribution<double> g(0.0, sigma);
      auto& d = peaks.storage();
      for (int64_t slot = 0; slot < 3; ++slot)
        for (int64_t i = 0; i < voxels; ++i) {
          const auto base = static_cast<size_t>(i + voxels * 3 * slot);
          const auto stride = static_cast<size_t>(voxels);
          if (d[base] == 0.0f && d[base + stride] == 0.0f && d[base + 2 * stride] == 0.0f) continue;
          for (size_t a = 0; a < 3; ++a) d[base + a * stride] += static_cast<float>(g(noise_rng));
        }
    }
    s.peaks.push_back(std::move(peaks));
  }
  return s;
}

std::string subject_id(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%04lld", static_cast<long long>(index + 1));
  return buf;
}

std::filesystem::path peaks_path(const std::filesystem::path& dir, const std::string& id, int64_t variant) {
  if (variant == 0) return dir / (id + "_peaks.nii.gz");
  return dir / (id + "_peaks_v" + std::to_string(variant) + ".nii.gz");
}

std::filesystem::path labels_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + "_labels.nii.gz");
}

std::vector<std::string> generate_dataset(const PhantomConfig& cfg, int64_t n_subjects,
                                          const std::filesystem::path& out_dir) {
  cfg.validate();
  if (n_subjects < 1) throw ConfigError("need at least one subject");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::string> ids;
  for (int64_t i = 0; i < n_subjects; ++i) ids.push_back(subject_id(i));

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n_subjects; ++i) {
    try {
      const Subject s = generate_subject(cfg, static_cast<uint64_t>(i));
      for (int64_t v = 0; v < cfg.variants; ++v) write_nifti(s.peaks[static_cast<size_t>(v)], peaks_path(out_dir, ids[i], v));
      write_nifti(s.labels, labels_path(out_dir, ids[i]));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  write_lines(out_dir / "dataset.txt", ids);
  write_lines(out_dir / "tracts.txt", cfg.tract_names());
  return ids;
}

std::vector<std::string> read_dataset_ids(const std::filesystem::path& dir) {
  auto ids = read_lines(dir / "dataset.txt");
  if (ids.empty()) throw InputError("dataset.txt in " + dir.string() + " lists no subjects");
  return ids;
}

std::vector<std::string> read_tract_names(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "tracts.txt")) return {};
  return read_lines(dir / "tracts.txt");
}

int64_t count_variants(const std::filesystem::path& dir, const std::string& id) {
  int64_t n = 0;
  while (std::filesystem::exists(peaks_path(dir, id, n))) ++n;
  return n;
}

}  // namespace wmseg::phantom
