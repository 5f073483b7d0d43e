#include "wmseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "wmseg/error.hpp"

namespace wmseg::metrics {

double dice(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dice: mask sizes differ");
  int64_t na = 0, nb = 0, both = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0.0f;
    const bool y = b[i] != 0.0f;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dice(const Volume& a, const Volume& b) {
  if (a.header().dims != b.header().dims || a.header().channels != b.header().channels) {
    throw ShapeError("dice: volume shapes differ");
  }
  return dice(a.data(), b.data());
}

SubjectScores evaluate_subject(const Volume& pred, const Volume& ref) {
  if (pred.header().dims != ref.header().dims) throw ShapeError("evaluate_subject: dims differ");
  if (pred.header().channels != ref.header().channels) throw ShapeError("evaluate_subject: tract counts differ");
  SubjectScores s;
  for (int64_t c = 0; c < ref.header().channels; ++c) s.per_tract.push_back(dice(pred.channel(c), ref.channel(c)));
  if (!s.per_tract.empty()) {
    s.mean = std::accumulate(s.per_tract.begin(), s.per_tract.end(), 0.0) / static_cast<double>(s.per_tract.size());
  }
  return s;
}

void ScoreTable::add(const std::string& subject, const SubjectScores& s) {
  if (s.per_tract.size() != tracts.size()) throw ShapeError("score row does not match the tract list");
  subjects.push_back(subject);
  scores.push_back(s.per_tract);
}

std::vector<double> ScoreTable::subject_means() const {
  std::vector<double> out;
  for (const auto& row : scores) {
    out.push_back(row.empty() ? 0.0 : std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  }
  return out;
}

std::string ScoreTable::to_csv() const {
  std::string out = "subject";
  for (const auto& t : tracts) out += "," + t;
  out += ",mean\n";
  const auto means = subject_means();
  char buf[32];
  for (size_t i = 0; i < subjects.size(); ++i) {
    out += subjects[i];
    for (double v : scores[i]) {
      std::snprintf(buf, sizeof buf, ",%.6f", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", means[i]);
    out += buf;
  }
  return out;
}

void ScoreTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv();
  if (!f) throw IoError("write failed: " + path.string());
}

double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) { return wilcoxon_test(x, y).p; }

WilcoxonResult wilcoxon_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("wilcoxon: sample lengths differ");
  std::vector<double> d;
  for (size_t i = 0; i < x.size(); ++i) {
    const double di = x[i] - y[i];
    if (di != 0.0) d.push_back(di);
  }
  const auto n = static_cast<int64_t>(d.size());
  if (n == 0) return {};

  std::vector<size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(d.size());
  double tie_term = 0.0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  double w_plus = 0.0, total = 0.0;
  for (size_t i = 0; i < d.size(); ++i) {
    total += rank[i];
    if (d[i] > 0) w_plus += rank[i];
  }
  const double w = std::min(w_plus, total - w_plus);

  if (n <= kWilcoxonExactMax) {
    // Ranks are multiples of 1/2, so every partial sum is exact.
    uint64_t hits = 0;
    const uint64_t patterns = uint64_t{1} << n;
    for (uint64_t mask = 0; mask < patterns; ++mask) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        if (mask >> i & 1u) s += rank[static_cast<size_t>(i)];
      }
      hits += std::min(s, total - s) <= w;
    }
    return {w, n, true, static_cast<double>(hits) / static_cast<double>(patterns)};
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return {w, n, false, 1.0};
  const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
  return {w, n, false, std::min(1.0, std::erfc(z / std::sqrt(2.0)))};
}

double bonferroni(double p, int64_t m) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("bonferroni: p outside [0,1]");
  if (m < 1) throw ParameterError("bonferroni: m must be at least 1");
  return std::min(1.0, p * static_cast<double>(m));
}

std::vector<FoldSpec> make_folds(const std::vector<std::string>& ids, int64_t k, const FoldRatios& ratios,
                                 uint64_t seed) {
  if (k < 2) throw ConfigError("make_folds: need at least 2 folds");
  if (ratios.train < 1 || ratios.validation < 0 || ratios.test < 1 ||
      ratios.train + ratios.validation + ratios.test != k) {
    throw ConfigError("make_folds: fold ratios must be positive block counts summing to k");
  }
  const auto n = static_cast<int64_t>(ids.size());
  if (n == 0 || n % k != 0) {
    throw ConfigError("make_folds: " + std::to_string(n) + " ids do not divide into " + std::to_string(k) + " folds");
  }
  std::vector<std::string> shuffled = ids;
  std::mt19937_64 rng(seed);
  for (size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng() % i]);

  const int64_t block = n / k;
  auto block_ids = [&](int64_t b) {
    auto first = shuffled.begin() + (b % k) * block;
    return std::vector<std::string>(first, first + block);
  };
  std::vector<FoldSpec> folds;
  for (int64_t f = 0; f < k; ++f) {
    FoldSpec spec;
    spec.index = f;
    int64_t b = f;
    for (int64_t i = 0; i < ratios.test; ++i, ++b) {
      auto v = block_ids(b);
      spec.test.insert(spec.test.end(), v.begin(), v.end());
    }
    for (int64_t i = 0; i < ratios.validation; ++i, ++b) {
      auto v = block_ids(b);
      spec.validation.insert(spec.validation.end(), v.begin(), v.end());
    }
    for (int64_t i = 0; i < ratios.train; ++i, ++b) {
      auto v = block_ids(b);
      spec.train.insert(spec.train.end(), v.begin(), v.end());
    }
    folds.push_back(std::move(spec));
  }
  return folds;
}

}  // namespace wmseg::metrics
