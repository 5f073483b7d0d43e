#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wmseg/volume.hpp"

namespace wmseg::metrics {

/// Dice overlap, treating every nonzero value as foreground. Two empty masks
/// score 1.
double dice(std::span<const float> a, std::span<const float> b);

/// Dice over all voxels and channels; dims and channel counts must agree.
double dice(const Volume& a, const Volume& b);

struct SubjectScores {
  std::vector<double> per_tract;
  double mean = 0.0;
};

/// One Dice per label channel and their arithmetic mean.
SubjectScores evaluate_subject(const Volume& pred, const Volume& ref);

struct ScoreTable {
  std::vector<std::string> tracts;
  std::vector<std::string> subjects;
  std::vector<std::vector<double>> scores;  // subjects x tracts

  void add(const std::string& subject, const SubjectScores& s);
  std::vector<double> subject_means() const;
  /// `subject,<tracts...>,mean` header, one row per subject, 6 decimals.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Two-sided Wilcoxon signed-rank p-value for paired samples. Zero
/// differences are dropped and tied magnitudes share their average rank.
/// Up to 20 nonzero pairs the p-value is exact (all sign patterns are
/// enumerated); above that a tie- and continuity-corrected normal
/// approximation is used. Returns 1 when every difference is zero.
double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  int64_t n = 0;           // nonzero differences
  bool exact = true;
  double p = 1.0;
};

/// The same test, also reporting the statistic and sample size.
WilcoxonResult wilcoxon_test(std::span<const double> x, std::span<const double> y);

inline constexpr int kWilcoxonExactMax = 20;

/// min(1, p * m).
double bonferroni(double p, int64_t m);

struct FoldSpec {
  int64_t index = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Block counts per role; they must sum to the fold count.
struct FoldRatios {
  int64_t train = 3;
  int64_t validation = 1;
  int64_t test = 1;
};

/// Shuffles ids with the seed and cuts them into k equal blocks. Fold f uses
/// the test blocks starting at f, the validation blocks after them
/// (cyclically) and the rest for training. Throws ConfigError when the ids do
/// not divide into k blocks or the ratios do not sum to k.
std::vector<FoldSpec> make_folds(const std::vector<std::string>& ids, int64_t k, const FoldRatios& ratios,
                                 uint64_t seed);

}  // namespace wmseg::metrics
