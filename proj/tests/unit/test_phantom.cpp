#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "wmseg/error.hpp"
#include "wmseg/nifti.hpp"
#include "wmseg/phantom.hpp"
#include "wmseg/postprocess.hpp"

using namespace wmseg;
using namespace wmseg::phantom;

namespace {

PhantomConfig no_jitter(PhantomConfig c) {
  c.jitter_translation = 0.0;
  c.jitter_rotation_deg = 0.0;
  c.jitter_scale = 0.0;
  return c;
}

double peak_norm(const Volume& p, int64_t x, int64_t y, int64_t z, int slot) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += std::pow(p.at(x, y, z, 3 * slot + a), 2);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("straight tube without noise") {
  PhantomConfig c = no_jitter(default_config(32));
  c.noise = 0.0;
  c.variants = 1;
  c.bundles = {{"x", {{4, 16, 16}, {27, 16, 16}}, 3.0}};
  const Subject s = generate_subject(c, 0);
  REQUIRE(s.peaks.size() == 1);
  const Volume& p = s.peaks[0];
  CHECK(p.channels() == 9);
  CHECK(s.labels.channels() == 1);
  int64_t inside = 0;
  for (int64_t z = 0; z < 32; ++z)
    for (int64_t y = 0; y < 32; ++y)
      for (int64_t x = 0; x < 32; ++x) {
        // Capsule: distance to the segment from x=4 to x=27.
        const double dx = std::max({0.0, 4.0 - x, x - 27.0});
        const bool in = std::sqrt(dx * dx + (y - 16.0) * (y - 16.0) + (z - 16.0) * (z - 16.0)) <= 3.0;
        REQUIRE(s.labels.at(x, y, z) == (in ? 1.0f : 0.0f));
        if (!in) {
          for (int ch = 0; ch < 9; ++ch) REQUIRE(p.at(x, y, z, ch) == 0.0f);
          continue;
        }
        ++inside;
        CHECK(std::abs(p.at(x, y, z, 0) - 1.0) < 1e-6);
        CHECK(std::abs(p.at(x, y, z, 1)) < 1e-6);
        CHECK(std::abs(p.at(x, y, z, 2)) < 1e-6);
        for (int ch = 3; ch < 9; ++ch) REQUIRE(p.at(x, y, z, ch) == 0.0f);
      }
  CHECK(inside > 0);
}

TEST_CASE("crossing tubes give two orthogonal peaks") {
  PhantomConfig c = no_jitter(default_config(32));
  c.noise = 0.0;
  c.variants = 1;
  c.bundles = {{"x", {{4, 16, 16}, {27, 16, 16}}, 3.0}, {"y", {{16, 4, 16}, {16, 27, 16}}, 3.0}};
  const Subject s = generate_subject(c, 0);
  const Volume& p = s.peaks[0];
  CHECK(s.labels.at(16, 16, 16, 0) == 1.0f);
  CHECK(s.labels.at(16, 16, 16, 1) == 1.0f);
  double d = 0.0;
  for (int a = 0; a < 3; ++a) d += p.at(16, 16, 16, a) * p.at(16, 16, 16, 3 + a);
  CHECK(std::abs(d) < 1e-6);
  CHECK(peak_norm(p, 16, 16, 16, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(peak_norm(p, 16, 16, 16, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(peak_norm(p, 16, 16, 16, 2) == 0.0);
  // Only the second bundle covers this voxel, so it lands in slot 0.
  CHECK(std::abs(p.at(16, 6, 16, 1)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(peak_norm(p, 16, 6, 16, 1) == 0.0);
}

TEST_CASE("default phantom properties") {
  PhantomConfig c = default_config(64);
  c.noise = 0.0;
  c.variants = 1;
  const Subject s = generate_subject(c, 3);
  CHECK(s.labels.channels() == 5);
  for (int64_t k = 0; k < 5; ++k) {
    const auto ch = s.labels.channel(k);
    CHECK(std::count(ch.begin(), ch.end(), 1.0f) > 100);
  }
  // One connected tube per bundle.
  CHECK(postprocess::largest_component(s.labels) == s.labels);
  // Unit norm for every nonzero noise-free peak.
  const Volume& p = s.peaks[0];
  int64_t crossing = 0;
  for (int64_t z = 0; z < 64; ++z)
    for (int64_t y = 0; y < 64; ++y)
      for (int64_t x = 0; x < 64; ++x)
        for (int slot = 0; slot < 3; ++slot) {
          const double nrm = peak_norm(p, x, y, z, slot);
          if (nrm != 0.0) REQUIRE(std::abs(nrm - 1.0) < 1e-6);
          if (slot == 1 && nrm != 0.0) ++crossing;
        }
  CHECK(crossing > 0);
}

TEST_CASE("determinism, jitter and noise") {
  const PhantomConfig c = default_config(32);
  const Subject a = generate_subject(c, 1);
  const Subject b = generate_subject(c, 1);
  REQUIRE(a.peaks.size() == 3);
  for (size_t v = 0; v < 3; ++v) CHECK(a.peaks[v] == b.peaks[v]);
  CHECK(a.labels == b.labels);
  CHECK(!(generate_subject(c, 2).labels == a.labels));
  PhantomConfig other = c;
  other.seed = 99;
  CHECK(!(generate_subject(other, 1).labels == a.labels));

  SUBCASE("noise only touches fibre voxels and grows with the variant") {
    PhantomConfig clean_cfg = c;
    clean_cfg.noise = 0.0;
    const Subject clean = generate_subject(clean_cfg, 1);
    CHECK(clean.labels == a.labels);
    std::array<double, 3> sq{};
    for (size_t v = 0; v < 3; ++v)
      for (size_t i = 0; i < clean.peaks[0].data().size(); ++i)
        sq[v] += std::pow(a.peaks[v].data()[i] - clean.peaks[0].data()[i], 2);
    CHECK(sq[0] > 0.0);
    CHECK(sq[0] < sq[1]);
    CHECK(sq[1] < sq[2]);
    for (int64_t z = 0; z < 32; ++z)
      for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x)
          for (int slot = 0; slot < 3; ++slot)
            if (peak_norm(clean.peaks[0], x, y, z, slot) == 0.0) REQUIRE(peak_norm(a.peaks[2], x, y, z, slot) == 0.0);
  }
}

TEST_CASE("config errors") {
  PhantomConfig c = default_config(32);
  c.bundles[0].control_points = {{0, 16, 16}, {31, 16, 16}};
  CHECK_THROWS_AS(generate_subject(c, 0), ConfigError);
  PhantomConfig d = default_config(32);
  d.bundles.clear();
  CHECK_THROWS_AS(d.validate(), ConfigError);
  PhantomConfig e = default_config(32);
  e.bundles[0].radius = 0.0;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  PhantomConfig f = default_config(32);
  f.variants = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("dataset on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "wmseg_phantom_test";
  std::filesystem::remove_all(dir);
  PhantomConfig c = default_config(32);
  const auto ids = generate_dataset(c, 3, dir);
  CHECK(ids == std::vector<std::string>{"sub-0001", "sub-0002", "sub-0003"});
  CHECK(read_dataset_ids(dir) == ids);
  CHECK(read_tract_names(dir) == c.tract_names());
  for (const auto& id : ids) {
    CHECK(count_variants(dir, id) == 3);
    const Volume labels = read_nifti(labels_path(dir, id));
    CHECK(labels.channels() == 5);
    for (int64_t v = 0; v < 3; ++v) {
      const Volume p = read_nifti(peaks_path(dir, id, v));
      CHECK(p.channels() == 9);
      CHECK(p.dims() == labels.dims());
      CHECK(p.header().spacing == labels.header().spacing);
    }
  }
  const Subject s = generate_subject(c, 1);
  CHECK(read_nifti(labels_path(dir, "sub-0002")) == s.labels);
  CHECK(read_nifti(peaks_path(dir, "sub-0002", 2)) == s.peaks[2]);
  CHECK_THROWS_AS(generate_dataset(c, 0, dir), ConfigError);
  std::filesystem::remove_all(dir);
}
