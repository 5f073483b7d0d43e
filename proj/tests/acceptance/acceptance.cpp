// One PASS/FAIL line per acceptance criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is nonzero if any line fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "wmseg/adamax.hpp"
#include "wmseg/augment.hpp"
#include "wmseg/cli.hpp"
#include "wmseg/fusion.hpp"
#include "wmseg/gradcheck.hpp"
#include "wmseg/metrics.hpp"
#include "wmseg/ops.hpp"
#include "wmseg/phantom.hpp"
#include "wmseg/postprocess.hpp"
#include "wmseg/streamtools.hpp"
#include "wmseg/train.hpp"
#include "wmseg/unet.hpp"

using namespace wmseg;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-5;
constexpr double kGradStep = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kLossTolerance = 1e-9;
constexpr double kAdamaxRelTolerance = 1e-9;
constexpr double kBenchTrainDice = 0.90;
constexpr double kBenchHeldOutDice = 0.80;
constexpr double kBenchBudgetSeconds = 15.0 * 60.0;
constexpr double kShapeBudgetSeconds = 10.0 * 60.0;
constexpr double kWilcoxonTolerance = 1e-12;
constexpr double kIdentityTolerance = 1e-6;
constexpr double kContrastRelTolerance = 1e-5;
constexpr size_t kKsSamples = 100000;
constexpr double kKsCritical1pct = 1.628;  // asymptotic, times 1/sqrt(n)

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

using TD = nn::Tensor<double>;

TD random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Scalarizes an op output with fixed random weights.
TD weighted_sum(nn::Tape<double>* tape, const TD& y, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const TD w = random_tensor(y.shape(), rng);
  return nn::sum(tape, nn::mul(tape, y, w));
}

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
  using namespace wmseg::nn;
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::map<std::string, double> err;

  {
    TD x = random_tensor({2, 3, 6, 6}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    err["conv2d"] = grad_check<double>([&](Tape<double>* t) { return weighted_sum(t, conv2d(t, x, k, b, 1), 1); },
                                       {x, k, b}, kGradStep);
  }
  {
    TD x = random_tensor({2, 3, 6, 6}, rng);
    err["pool2x"] = grad_check<double>([&](Tape<double>* t, const TD& v) { return weighted_sum(t, pool2x(t, v), 2); },
                                       x, kGradStep);
  }
  {
    TD x = random_tensor({2, 4, 3, 3}, rng), k = random_tensor({4, 3, 2, 2}, rng);
    err["upconv2x"] =
        grad_check<double>([&](Tape<double>* t) { return weighted_sum(t, upconv2x(t, x, k), 3); }, {x, k}, kGradStep);
  }
  {
    TD x = random_tensor({3, 10}, rng);
    err["relu"] =
        grad_check<double>([&](Tape<double>* t, const TD& v) { return weighted_sum(t, relu(t, v), 4); }, x, kGradStep);
    err["sigmoid"] = grad_check<double>(
        [&](Tape<double>* t, const TD& v) { return weighted_sum(t, sigmoid(t, v), 5); }, x, kGradStep);
    err["dropout"] = grad_check<double>(
        [&](Tape<double>* t, const TD& v) {
          Rng mask(6);
          return weighted_sum(t, dropout(t, v, 0.4, true, mask), 7);
        },
        x, kGradStep);
  }
  {
    TD a = random_tensor({2, 2, 4, 4}, rng), b = random_tensor({2, 3, 4, 4}, rng);
    err["concat_channels"] = grad_check<double>(
        [&](Tape<double>* t) { return weighted_sum(t, concat_channels(t, a, b), 8); }, {a, b}, kGradStep);
  }
  {
    TD o = random_tensor({12}, rng, 0.05, 0.95), y = random_tensor({12}, rng, 0.0, 1.0);
    for (size_t i = 0; i < 6; ++i) y.values()[i] = i % 2 ? 1.0 : 0.0;
    err["bce_loss"] = grad_check<double>([&](Tape<double>* t) { return bce_loss(t, o, y); }, {o, y}, kGradStep);
  }
  {
    TD a = random_tensor({5}, rng), b = random_tensor({5}, rng);
    err["add/mul/scale/sum"] = grad_check<double>(
        [&](Tape<double>* t) { return scale(t, sum(t, mul(t, add(t, a, b), a)), 0.7); }, {a, b}, kGradStep);
  }
  {
    UNetConfig c;
    c.in_channels = 9;
    c.out_channels = 3;
    c.depth = 2;
    c.base_channels = 4;
    c.input_size = 8;
    Rng init(11);
    UNet<double> m(c, init);
    TD x = random_tensor({1, 9, 8, 8}, rng);
    TD y(Shape{1, 3, 8, 8});
    std::bernoulli_distribution bit(0.4);
    for (auto& v : y.values()) v = bit(rng) ? 1.0 : 0.0;
    auto leaves = m.parameter_tensors();
    leaves.push_back(x);
    err["unet(depth 2)"] = grad_check<double>(
        [&](Tape<double>* t) {
          Rng unused(0);
          return bce_loss(t, m.forward(t, x, false, unused), y);
        },
        leaves, kGradStep);
  }

  double worst = 0.0;
  for (const auto& [name, e] : err) {
    r.require(e < kGradTolerance, name + " error " + fmt("%.2e", e));
    worst = std::max(worst, e);
  }
  const double secs = seconds_since(t0);
  r.require(secs < kGradBudgetSeconds, "runtime " + fmt("%.1f s", secs));
  r.note(std::to_string(err.size()) + " checks, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
  return r;
}

// ------------------------------------------------------------------ 2

Outcome loss_formula() {
  Outcome r;
  const double sym = nn::bce_loss<double>(nullptr, TD({2}, {0.5, 0.5}), TD({2}, {1.0, 0.0})).item();
  const double quarter = nn::bce_loss<double>(nullptr, TD({1}, std::vector<double>{0.25}), TD({1}, std::vector<double>{1.0})).item();
  const double quarter_neg = nn::bce_loss<double>(nullptr, TD({1}, std::vector<double>{0.75}), TD({1}, std::vector<double>{0.0})).item();
  r.require(std::abs(sym - std::log(2.0)) <= kLossTolerance, "ln 2 case gave " + fmt("%.15f", sym));
  r.require(std::abs(quarter + std::log(0.25)) <= kLossTolerance, "-ln 0.25 case gave " + fmt("%.15f", quarter));
  r.require(std::abs(quarter_neg + std::log(0.25)) <= kLossTolerance, "negative-target case gave " + fmt("%.15f", quarter_neg));
  r.note("|err| " + fmt("%.1e", std::abs(sym - std::log(2.0))) + " and " +
         fmt("%.1e", std::abs(quarter + std::log(0.25))));
  return r;
}

// ------------------------------------------------------------------ 3

Outcome adamax_first_step() {
  Outcome r;
  std::mt19937_64 rng(303);
  std::vector<TD> params;
  for (nn::Shape s : {nn::Shape{7}, nn::Shape{3, 4}, nn::Shape{2, 2, 3, 3}}) {
    TD p = random_tensor(s, rng);
    p.set_requires_grad(true);
    params.push_back(p);
  }
  std::vector<std::vector<double>> before, grads;
  std::uniform_real_distribution<double> mag(-8.0, 1.0);
  std::bernoulli_distribution sign(0.5), zero(0.1);
  for (auto& p : params) {
    before.emplace_back(p.values().begin(), p.values().end());
    auto g = p.ensure_grad();
    for (auto& v : g) v = zero(rng) ? 0.0 : (sign(rng) ? 1.0 : -1.0) * std::pow(10.0, mag(rng));
    grads.emplace_back(g.begin(), g.end());
  }
  nn::Adamax<double> opt(params);
  const double lr = opt.config().lr;
  opt.step();
  double worst = 0.0;
  int64_t moved = 0, still = 0;
  for (size_t k = 0; k < params.size(); ++k) {
    for (size_t i = 0; i < grads[k].size(); ++i) {
      const double delta = params[k].values()[i] - before[k][i];
      if (grads[k][i] == 0.0) {
        r.require(delta == 0.0, "zero-gradient parameter moved");
        ++still;
        continue;
      }
      worst = std::max(worst, std::abs(std::abs(delta) - lr) / lr);
      r.require(std::signbit(delta) != std::signbit(grads[k][i]), "step along the gradient");
      ++moved;
    }
  }
  r.require(lr == 0.002, "default learning rate");
  r.require(worst <= kAdamaxRelTolerance, "relative deviation " + fmt("%.2e", worst));
  r.note(std::to_string(moved) + " parameters moved by lr (max rel dev " + fmt("%.1e", worst) + "), " +
         std::to_string(still) + " zero-gradient parameters untouched");
  return r;
}

// ------------------------------------------------------------------ 4

Outcome overfit_benchmark() {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  const phantom::PhantomConfig pc = phantom::default_config(64);
  std::vector<nn::TrainingSubject> subjects;
  for (int64_t i = 0; i < 10; ++i) {
    phantom::Subject s = phantom::generate_subject(pc, static_cast<uint64_t>(i));
    subjects.push_back({phantom::subject_id(i), std::move(s.peaks), std::move(s.labels)});
  }
  const std::vector<nn::TrainingSubject> train_set(subjects.begin(), subjects.begin() + 8);
  const std::vector<nn::TrainingSubject> val_set{subjects[8]};
  const nn::TrainingSubject& held_out = subjects[9];

  nn::UNetConfig uc;
  uc.in_channels = 9;
  uc.out_channels = pc.tract_count();
  uc.depth = 3;
  uc.base_channels = 8;
  uc.input_size = 64;
  nn::Rng init(1);
  nn::UNet<float> model(uc, init);
  nn::TrainConfig tc;
  tc.batch_size = 16;
  tc.batches_per_epoch = 20;
  tc.epochs = 200;
  tc.seed = 1;
  tc.augment = false;
  const nn::TrainHistory h = nn::train(model, train_set, val_set, tc, {});

  auto score = [&](const nn::TrainingSubject& s) {
    const Volume fused = fusion::fuse_mean(fusion::predict_orientations(model, s.inputs[0]));
    return metrics::evaluate_subject(postprocess::binarize(fused, 0.5), s.labels).mean;
  };
  double train_dice = 0.0;
  for (const auto& s : train_set) train_dice += score(s) / static_cast<double>(train_set.size());
  const double test_dice = score(held_out);
  const double secs = seconds_since(t0);
  r.require(train_dice >= kBenchTrainDice, "training Dice " + fmt("%.4f", train_dice));
  r.require(test_dice >= kBenchHeldOutDice, "held-out Dice " + fmt("%.4f", test_dice));
  r.require(secs <= kBenchBudgetSeconds, "runtime " + fmt("%.0f s", secs));
  r.note("train Dice " + fmt("%.4f", train_dice) + ", held-out Dice " + fmt("%.4f", test_dice) + ", best epoch " +
         std::to_string(h.best_epoch) + ", " + fmt("%.0f s", secs) + " on " +
         std::to_string(std::thread::hardware_concurrency()) + " core(s)");
  return r;
}

// ------------------------------------------------------------------ 5

Outcome fusion_invariants() {
  Outcome r;
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const int64_t k = 4;
  Volume probs(VolumeHeader::make({7, 6, 5}, k));
  for (auto& v : probs.data()) v = u(rng);
  Volume stacked(VolumeHeader::make({7, 6, 5}, 3 * k));
  for (int64_t t = 0; t < k; ++t)
    for (auto o : kOrientations) {
      const auto src = probs.channel(t);
      auto dst = stacked.channel(fusion::stacked_channel(t, o));
      std::copy(src.begin(), src.end(), dst.begin());
    }
  r.require(fusion::fuse_mean(stacked) == probs, "mean of identical volumes");

  int64_t compared = 0;
  for (double delta : {0.4, 0.25, 0.1, 0.01}) {
    for (double theta : {0.5, 0.3}) {
      // Voxel x enumerates the 8 vote patterns; above-threshold votes read
      // theta + delta, the others theta - delta.
      Volume s(VolumeHeader::make({8, 1, 1}, 3 * k));
      for (int64_t pattern = 0; pattern < 8; ++pattern)
        for (int64_t t = 0; t < k; ++t)
          for (auto o : kOrientations) {
            const bool up = (pattern >> static_cast<int>(o)) & 1;
            s.at(pattern, 0, 0, fusion::stacked_channel(t, o)) = static_cast<float>(up ? theta + delta : theta - delta);
          }
      const Volume majority = fusion::fuse_majority(s, theta);
      const Volume mean = postprocess::binarize(fusion::fuse_mean(s), theta);
      r.require(majority == mean, "majority vs thresholded mean, delta " + fmt("%g", delta) + ", theta " + fmt("%g", theta));
      for (int64_t pattern = 0; pattern < 8; ++pattern) {
        const int votes = std::popcount(static_cast<unsigned>(pattern));
        r.require(majority.at(pattern, 0, 0, 0) == (votes >= 2 ? 1.0f : 0.0f), "vote count");
      }
      ++compared;
    }
  }
  r.note("bit-identical mean; 8 vote patterns agree in " + std::to_string(compared) + " settings");
  return r;
}

// ------------------------------------------------------------------ 6

Outcome shape_contract() {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  const nn::UNetConfig cfg;  // in 9, out 72, depth 4, base 64, 144^3
  nn::Rng init(606);
  const nn::UNet<float> model(cfg, init);
  Volume peaks(VolumeHeader::make({144, 144, 144}, 9, {1.25, 1.25, 1.25}));
  {
    std::mt19937_64 rng(607);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& v : peaks.data()) v = u(rng);
  }
  const Volume stacked = fusion::predict_orientations(model, peaks, 8);
  r.require(stacked.dims() == peaks.dims(), "stacked grid");
  r.require(stacked.channels() == 216, "stacked channels " + std::to_string(stacked.channels()));
  const bool in_range = std::all_of(stacked.data().begin(), stacked.data().end(),
                                    [](float v) { return std::isfinite(v) && v > 0.0f && v < 1.0f; });
  r.require(in_range, "probabilities inside (0,1)");
  const Volume fused = fusion::fuse_mean(stacked);
  r.require(fused.dims() == peaks.dims(), "fused grid");
  r.require(fused.channels() == 72, "fused channels " + std::to_string(fused.channels()));
  const double secs = seconds_since(t0);
  r.require(secs < kShapeBudgetSeconds, "runtime " + fmt("%.0f s", secs));
  r.note("144^3x9 -> 144^3x" + std::to_string(stacked.channels()) + " -> 144^3x" + std::to_string(fused.channels()) +
         ", " + std::to_string(model.parameter_count()) + " parameters, " + fmt("%.0f s", secs));
  return r;
}

// ------------------------------------------------------------------ 7

double dice_by_sets(const Volume& a, const Volume& b) {
  std::set<size_t> sa, sb;
  for (size_t i = 0; i < a.data().size(); ++i) {
    if (a.data()[i] != 0.0f) sa.insert(i);
    if (b.data()[i] != 0.0f) sb.insert(i);
  }
  if (sa.empty() && sb.empty()) return 1.0;
  std::vector<size_t> both;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

// Breadth-first flood fill from every unvisited voxel in scan order; the
// first component of maximal size wins.
std::vector<float> flood_fill_largest(const Volume& m, int conn) {
  const auto d = m.dims();
  const auto data = m.data();
  std::vector<int> comp(data.size(), -1);
  std::vector<size_t> sizes;
  for (size_t seed = 0; seed < data.size(); ++seed) {
    if (data[seed] == 0.0f || comp[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::deque<size_t> queue{seed};
    comp[seed] = id;
    while (!queue.empty()) {
      const size_t i = queue.front();
      queue.pop_front();
      ++sizes.back();
      const int64_t x = static_cast<int64_t>(i) % d[0], y = (static_cast<int64_t>(i) / d[0]) % d[1],
                    z = static_cast<int64_t>(i) / (d[0] * d[1]);
      for (int64_t dz = -1; dz <= 1; ++dz)
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
            if (l1 == 0 || (conn == 6 && l1 > 1) || (conn == 18 && l1 > 2)) continue;
            const int64_t nx = x + dx, ny = y + dy, nz = z + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2]) continue;
            const size_t j = static_cast<size_t>(nx + d[0] * (ny + d[1] * nz));
            if (data[j] != 0.0f && comp[j] < 0) {
              comp[j] = id;
              queue.push_back(j);
            }
          }
    }
  }
  std::vector<float> out(data.size(), 0.0f);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (size_t i = 0; i < out.size(); ++i)
    if (comp[i] == best) out[i] = 1.0f;
  return out;
}

// Two-sided exact p by enumerating all 2^n sign assignments of the ranks.
double wilcoxon_by_enumeration(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (size_t i = 0; i < n; ++i) {
    double below = 0.0, tied = 0.0;
    for (size_t j = 0; j < n; ++j) {
      below += std::abs(d[j]) < std::abs(d[i]);
      tied += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = below + (tied + 1.0) / 2.0;
  }
  double wp = 0.0, wm = 0.0;
  for (size_t i = 0; i < n; ++i) (d[i] > 0 ? wp : wm) += rank[i];
  const double w = std::min(wp, wm);
  uint64_t extreme = 0;
  for (uint64_t signs = 0; signs < (uint64_t{1} << n); ++signs) {
    double p = 0.0, m = 0.0;
    for (size_t i = 0; i < n; ++i) ((signs >> i) & 1 ? p : m) += rank[i];
    extreme += std::min(p, m) <= w;
  }
  return static_cast<double>(extreme) / std::ldexp(1.0, static_cast<int>(n));
}

Outcome oracle_equivalence() {
  Outcome r;
  std::mt19937_64 rng(707);
  int dice_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double pa = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
    const double pb = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
    Volume a(VolumeHeader::make({16, 16, 16}, 1)), b(VolumeHeader::make({16, 16, 16}, 1));
    std::bernoulli_distribution ba(pa), bb(pb);
    for (auto& v : a.data()) v = ba(rng) ? 1.0f : 0.0f;
    for (auto& v : b.data()) v = bb(rng) ? 1.0f : 0.0f;
    dice_bad += metrics::dice(a, b) != dice_by_sets(a, b);
  }
  r.require(dice_bad == 0, std::to_string(dice_bad) + " Dice mismatches");

  int lcc_bad = 0, lcc_trials = 0;
  for (int conn : {6, 18, 26}) {
    for (int trial = 0; trial < 100; ++trial) {
      Volume m(VolumeHeader::make({8, 8, 8}, 1));
      std::bernoulli_distribution b(std::uniform_real_distribution<double>(0.05, 0.5)(rng));
      for (auto& v : m.data()) v = b(rng) ? 1.0f : 0.0f;
      const Volume got = postprocess::largest_component(m, postprocess::connectivity_from_int(conn));
      const auto want = flood_fill_largest(m, conn);
      lcc_bad += !std::equal(want.begin(), want.end(), got.data().begin());
      ++lcc_trials;
    }
  }
  r.require(lcc_bad == 0, std::to_string(lcc_bad) + " largest-component mismatches");

  double worst = 0.0;
  for (int n : {6, 8, 10, 12}) {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 g(seed * 1000 + static_cast<uint64_t>(n));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        x[i] = normal(g) + 0.4;
        y[i] = normal(g);
      }
      worst = std::max(worst, std::abs(metrics::wilcoxon_signed_rank(x, y) - wilcoxon_by_enumeration(x, y)));
    }
  }
  r.require(worst <= kWilcoxonTolerance, "Wilcoxon deviation " + fmt("%.2e", worst));
  r.note("100 Dice pairs exact, " + std::to_string(lcc_trials) + " component volumes exact, 200 Wilcoxon cases max dev " +
         fmt("%.1e", worst));
  return r;
}

// ------------------------------------------------------------------ 8

double ks_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double f = std::clamp((xs[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double max_abs_diff(const Slice2D& a, const Slice2D& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  return m;
}

Outcome augmentation() {
  using namespace wmseg::augment;
  Outcome r;
  Rng rng(808);
  Slice2D img(40, 30, 9), lab(40, 30, 3);
  {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::bernoulli_distribution b(0.3);
    for (auto& v : img.data) v = u(rng);
    for (auto& v : lab.data) v = b(rng) ? 1.0f : 0.0f;
  }
  double identity_err = 0.0;
  for (auto o : kOrientations) {
    for (bool reorient : {false, true}) {
      const auto [i2, l2] = apply_spatial(img, lab, AugmentParams::identity(), o, reorient);
      identity_err = std::max(identity_err, max_abs_diff(i2, img));
      r.require(l2.data == lab.data, "identity label warp");
    }
  }
  identity_err = std::max(identity_err, max_abs_diff(apply_resample(img, 1.0), img));
  identity_err = std::max(identity_err, max_abs_diff(apply_intensity(img, AugmentParams::identity(), rng), img));
  {
    Slice2D i3 = img, l3 = lab;
    augment_sample(i3, l3, Orientation::Axial, AugmentConfig::disabled(), rng);
    identity_err = std::max(identity_err, max_abs_diff(i3, img));
    r.require(l3.data == lab.data, "disabled pipeline label");
  }
  r.require(identity_err <= kIdentityTolerance, "identity error " + fmt("%.2e", identity_err));

  const AugmentConfig cfg;
  std::map<std::string, std::pair<Range, std::vector<double>>> draws{
      {"rotation_x", {cfg.rotation_angle, {}}},  {"rotation_y", {cfg.rotation_angle, {}}},
      {"rotation_z", {cfg.rotation_angle, {}}},  {"elastic_alpha", {cfg.elastic_alpha, {}}},
      {"elastic_sigma", {cfg.elastic_sigma, {}}}, {"shift_u", {cfg.displacement_range, {}}},
      {"shift_v", {cfg.displacement_range, {}}},  {"zoom", {cfg.zoom_factor, {}}},
      {"resample", {cfg.resample_factor, {}}},    {"noise_variance", {cfg.noise_variance, {}}},
      {"contrast", {cfg.contrast_factor, {}}},    {"brightness", {cfg.brightness_factor, {}}}};
  for (auto& [name, d] : draws) d.second.reserve(kKsSamples);
  Rng sampler(809);
  for (size_t i = 0; i < kKsSamples; ++i) {
    const AugmentParams p = sample_params(cfg, sampler);
    draws["rotation_x"].second.push_back(p.rotation[0]);
    draws["rotation_y"].second.push_back(p.rotation[1]);
    draws["rotation_z"].second.push_back(p.rotation[2]);
    draws["elastic_alpha"].second.push_back(p.elastic_alpha);
    draws["elastic_sigma"].second.push_back(p.elastic_sigma);
    draws["shift_u"].second.push_back(p.shift_u);
    draws["shift_v"].second.push_back(p.shift_v);
    draws["zoom"].second.push_back(p.zoom);
    draws["resample"].second.push_back(p.resample);
    draws["noise_variance"].second.push_back(p.noise_variance);
    draws["contrast"].second.push_back(p.contrast);
    draws["brightness"].second.push_back(p.brightness);
  }
  const double critical = kKsCritical1pct / std::sqrt(static_cast<double>(kKsSamples));
  double worst_ks = 0.0;
  for (const auto& [name, d] : draws) {
    const double ks = ks_uniform(d.second, d.first.lo, d.first.hi);
    r.require(ks < critical, "KS " + name + " " + fmt("%.5f", ks));
    worst_ks = std::max(worst_ks, ks);
  }

  double worst_mean = 0.0;
  for (double beta : {0.7, 0.85, 1.0, 1.15, 1.3}) {
    AugmentParams p;
    p.contrast = beta;
    const Slice2D out = apply_intensity(img, p, rng);
    for (int64_t c = 0; c < img.channels; ++c) {
      double m0 = 0.0, m1 = 0.0;
      for (float v : img.channel(c)) m0 += v;
      for (float v : out.channel(c)) m1 += v;
      m0 /= static_cast<double>(img.plane());
      m1 /= static_cast<double>(img.plane());
      worst_mean = std::max(worst_mean, std::abs(m1 - m0) / std::max(std::abs(m0), 1e-12));
    }
  }
  r.require(worst_mean <= kContrastRelTolerance, "contrast mean drift " + fmt("%.2e", worst_mean));
  r.note("identity err " + fmt("%.1e", identity_err) + ", " + std::to_string(draws.size()) + " KS tests max D " +
         fmt("%.5f", worst_ks) + " < " + fmt("%.5f", critical) + ", contrast mean drift " + fmt("%.1e", worst_mean));
  return r;
}

// ------------------------------------------------------------------ 9

streamtools::Streamline line(streamtools::Point a, streamtools::Point b, int n) {
  streamtools::Streamline s;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    s.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])});
  }
  return s;
}

streamtools::Streamline arc(streamtools::Point c, double radius, double from, double to, int n) {
  streamtools::Streamline s;
  for (int i = 0; i < n; ++i) {
    const double a = from + (to - from) * i / (n - 1);
    s.push_back({c[0] + radius * std::cos(a), c[1] + radius * std::sin(a), c[2]});
  }
  return s;
}

Outcome streamline_suite() {
  using namespace wmseg::streamtools;
  Outcome r;
  const VolumeHeader grid = VolumeHeader::make({64, 64, 64}, 1);

  std::vector<Streamline> keep, drop;
  keep.push_back(line({0, 0, 0}, {100, 0, 0}, 200));
  keep.push_back(line({5, 5, 5}, {40, 30, 20}, 17));
  const double r120 = 120.0 / (2.0 * std::numbers::pi);
  keep.push_back(arc({50, 50, 50}, r120, 0.0, 2.0 * std::numbers::pi, 400));
  for (double gap : {2.0, 4.0, 8.0}) {
    Streamline h = line({0, 0, 0}, {20, 0, 0}, 21);
    for (const auto& p : arc({20, gap / 2, 0}, gap / 2, -std::numbers::pi / 2, std::numbers::pi / 2, 12)) h.push_back(p);
    for (const auto& p : line({20, gap, 0}, {0, gap, 0}, 21)) h.push_back(p);
    drop.push_back(h);
  }
  std::vector<Streamline> all = keep;
  all.insert(all.end(), drop.begin(), drop.end());
  const Tractogram filtered = filter_hairpins(Tractogram{all, grid}, 30.0, 150.0);
  r.require(filtered.streamlines == keep, "hairpin filter kept " + std::to_string(filtered.size()) + " of " +
                                              std::to_string(all.size()));

  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  int flip_bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Streamline a, b;
    const int na = 2 + trial % 11, nb = na;
    for (int i = 0; i < na; ++i) a.push_back({u(rng), u(rng), u(rng)});
    for (int i = 0; i < nb; ++i) b.push_back({u(rng), u(rng), u(rng)});
    const double d = mdf(a, b);
    flip_bad += d != mdf(reversed(a), b) || d != mdf(a, reversed(b)) || d != mdf(b, a);
  }
  r.require(flip_bad == 0, std::to_string(flip_bad) + " mdf flip mismatches");

  const int64_t n = 24;
  Volume peaks(VolumeHeader::make({n, n, n}, 9)), mask(VolumeHeader::make({n, n, n}, 1));
  const double c = (n - 1) / 2.0;
  for (int64_t z = 0; z < n; ++z)
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 1; x < n - 1; ++x)
        if (std::hypot(y - c, z - c) <= 3.0) {
          mask.at(x, y, z) = 1.0f;
          peaks.at(x, y, z, 0) = 1.0f;
        }
  std::mt19937_64 seeds(910);
  const Tractogram tracked = track_within_mask(peaks, mask, TrackingConfig{}, seeds);
  const Volume vox = streamlines_to_mask(tracked, mask.header());
  bool subset = tracked.size() > 0;
  for (size_t i = 0; i < vox.data().size(); ++i) subset = subset && vox.data()[i] <= mask.data()[i];
  r.require(subset, "tracked voxels inside the tube");

  std::vector<Streamline> bundles;
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  const double threshold = 2.0;
  for (int i = 0; i < 40; ++i) {
    const double y = i % 2 ? 10.0 * threshold : 0.0;
    Streamline l = line({0, y + jitter(rng), jitter(rng)}, {25, y + jitter(rng), jitter(rng)}, 8 + i % 6);
    bundles.push_back(i % 3 == 0 ? reversed(l) : l);
  }
  const auto clusters = quickbundles(Tractogram{bundles, grid}, threshold);
  bool separated = clusters.size() == 2;
  for (const auto& cl : clusters)
    for (size_t i : cl.indices) separated = separated && i % 2 == cl.indices.front() % 2;
  r.require(separated, "quickbundles gave " + std::to_string(clusters.size()) + " clusters");

  r.note(std::to_string(drop.size()) + " hairpins removed, " + std::to_string(keep.size()) +
         " kept; 500 mdf flips exact; " + std::to_string(tracked.size()) + " tracked streamlines inside mask; " +
         std::to_string(clusters.size()) + " clusters");
  return r;
}

// ------------------------------------------------------------------ 10

std::string quote(const std::string& s) { return "'" + s + "'"; }

std::vector<std::vector<std::string>> pipeline_commands(const fs::path& dir) {
  const std::string d = dir.string();
  const std::string data = d + "/data";
  std::vector<std::vector<std::string>> cmds;
  cmds.push_back({"--seed", "7", "phantom", "--out", data, "--subjects", "6", "--grid", "32", "--variants", "2"});
  const std::vector<std::string> common{"--depth", "2", "--base-channels", "4", "--epochs", "2", "--batches-per-epoch",
                                        "3", "--batch-size", "4", "--folds", "6", "--ratios", "4,1,1"};
  auto train = std::vector<std::string>{"--seed", "7", "train", "--data", data, "--out", d + "/seg.bin"};
  train.insert(train.end(), common.begin(), common.end());
  cmds.push_back(train);
  auto fuse = std::vector<std::string>{"--seed", "7", "train", "--data", data, "--out", d + "/fuse.bin",
                                       "--stage", "fusion", "--base-weights", d + "/seg.bin"};
  fuse.insert(fuse.end(), common.begin(), common.end());
  cmds.push_back(fuse);
  fs::create_directories(dir / "pred");
  for (const std::string id : {"sub-0005", "sub-0006"}) {
    const std::string peaks = phantom::peaks_path(data, id).string();
    cmds.push_back({"--seed", "7", "predict", "--peaks", peaks, "--weights", d + "/seg.bin", "--out",
                    d + "/pred/" + id + "_seg.nii.gz", "--probabilities", d + "/" + id + "_prob.nii.gz"});
    cmds.push_back({"--seed", "7", "predict", "--peaks", peaks, "--weights", d + "/seg.bin", "--fusion", "majority",
                    "--out", d + "/" + id + "_majority.nii.gz"});
    cmds.push_back({"--seed", "7", "predict", "--peaks", peaks, "--weights", d + "/seg.bin", "--fusion", "fcnn",
                    "--fusion-weights", d + "/fuse.bin", "--out", d + "/" + id + "_fcnn.nii.gz"});
  }
  cmds.push_back({"--seed", "7", "evaluate", "--pred", d + "/pred", "--ref", data, "--out", d + "/scores.csv",
                  "--baseline-out", d + "/baseline.csv", "--report", d + "/report.txt"});
  const std::string labels = phantom::labels_path(data, "sub-0001").string();
  cmds.push_back({"--seed", "7", "mask2tract", "--mask", labels, "--peaks", phantom::peaks_path(data, "sub-0001").string(),
                  "--out", d + "/tract.tck", "--channel", "2", "--seeds-per-voxel", "2"});
  cmds.push_back({"--seed", "7", "filter-streamlines", "--in", d + "/tract.tck", "--out", d + "/filtered.tck",
                  "--reference", labels, "--min-cluster-size", "3", "--min-density", "2", "--report",
                  d + "/filter.txt"});
  return cmds;
}

std::map<std::string, std::vector<char>> snapshot_files(const fs::path& dir) {
  std::map<std::string, std::vector<char>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }
  return out;
}

Outcome cli_determinism() {
  Outcome r;
  const fs::path root = fs::temp_directory_path() / ("wmseg-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::map<std::string, std::vector<char>>> runs;
  size_t commands = 0;
  // Both runs use the same paths; each run's outputs are moved aside afterwards.
  const fs::path dir = root / "work";
  for (const char* name : {"a", "b"}) {
    fs::create_directories(dir);
    const auto cmds = pipeline_commands(dir);
    commands = cmds.size();
    for (const auto& args : cmds) {
      std::string line = quote(WMSEG_CLI_PATH);
      for (const auto& a : args) line += " " + quote(a);
      line += " >> " + quote((root / (std::string(name) + ".log")).string()) + " 2>&1";
      const int rc = std::system(line.c_str());
      r.require(rc == 0, "exit status of '" + args[2] + "' in run " + name);
      if (rc != 0) {
        fs::remove_all(root);
        return r;
      }
    }
    runs.push_back(snapshot_files(dir));
    fs::rename(dir, root / name);
  }
  size_t differing = 0;
  for (const auto& [path, bytes] : runs[0]) {
    auto it = runs[1].find(path);
    if (it == runs[1].end() || it->second != bytes) {
      ++differing;
      r.require(false, "differs: " + path);
    }
  }
  r.require(runs[0].size() == runs[1].size(), "same file sets");
  r.note(std::to_string(commands) + " commands per run, " + std::to_string(runs[0].size()) + " output files, " +
         std::to_string(differing) + " differ");
  fs::remove_all(root);
  return r;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  cli::configure_runtime(0);
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "loss formula", loss_formula},
      {3, "adamax first step", adamax_first_step},
      {4, "overfit benchmark", overfit_benchmark},
      {5, "fusion invariants", fusion_invariants},
      {6, "shape contract", shape_contract},
      {7, "oracle equivalence", oracle_equivalence},
      {8, "augmentation", augmentation},
      {9, "streamline suite", streamline_suite},
      {10, "cli determinism", cli_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
