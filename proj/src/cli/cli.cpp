#include "wmseg/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <omp.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "wmseg/error.hpp"
#include "wmseg/fusion.hpp"
#include "wmseg/metrics.hpp"
#include "wmseg/nifti.hpp"
#include "wmseg/phantom.hpp"
#include "wmseg/postprocess.hpp"
#include "wmseg/streamtools.hpp"
#include "wmseg/train.hpp"
#include "wmseg/weights.hpp"

namespace wmseg::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) { return s.substr(0, s.find('#')); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> default_tract_names(int64_t k) {
  std::vector<std::string> out;
  for (int64_t i = 0; i < k; ++i) out.push_back("tract_" + std::to_string(i));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void check_written(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec) || fs::file_size(path, ec) == 0) {
    throw IoError("output was not written: " + path.string());
  }
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

// ---------------------------------------------------------------- phantom

struct PhantomOptions {
  std::string out;
  int64_t subjects = 10;
  int64_t grid = 64;
  double noise = 0.05;
  int64_t variants = 3;
};

void run_phantom(const PhantomOptions& o, uint64_t seed, std::ostream& out) {
  phantom::PhantomConfig cfg = phantom::default_config(o.grid);
  cfg.noise = o.noise;
  cfg.variants = o.variants;
  cfg.seed = seed;
  const auto ids = phantom::generate_dataset(cfg, o.subjects, o.out);
  for (const auto& id : ids) {
    check_written(phantom::labels_path(o.out, id));
    for (int64_t v = 0; v < cfg.variants; ++v) check_written(phantom::peaks_path(o.out, id, v));
  }
  out << "wrote " << ids.size() << " subjects with " << cfg.tract_count() << " tracts to " << o.out << "\n";
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string data;
  std::string out;
  std::string history;
  std::string stage = "segmentation";
  std::string base_weights;
  std::string train_subjects;
  std::string val_subjects;
  int64_t folds = 5;
  int64_t fold = 0;
  std::string ratios = "3,1,1";
  int64_t depth = 4;
  int64_t base_channels = 64;
  int64_t filter_size = 3;
  double dropout = 0.4;
  int64_t input_size = 0;
  int64_t epochs = 500;
  int64_t batches_per_epoch = 162;
  int64_t batch_size = 56;
  double lr = 0.002;
  bool no_augment = false;
  int64_t peak_variants = 0;
  int64_t inference_batch = 8;
};

nn::TrainingSubject load_training_subject(const fs::path& dir, const std::string& id, int64_t size,
                                          std::ostream& err) {
  const int64_t variants = phantom::count_variants(dir, id);
  if (variants == 0) throw InputError("no peak image for subject " + id + " in " + dir.string());
  nn::TrainingSubject s;
  s.id = id;
  const Volume first = read_nifti(phantom::peaks_path(dir, id, 0));
  validate_peak_volume(first);
  const CropPlan plan = plan_crop_or_pad(first, {size, size, size});
  if (plan.loses_content) err << "warning: cropping " << id << " to " << size << "^3 drops nonzero voxels\n";
  s.inputs.push_back(apply_crop_plan(first, plan));
  for (int64_t v = 1; v < variants; ++v) {
    const Volume p = read_nifti(phantom::peaks_path(dir, id, v));
    validate_peak_volume(p);
    if (p.dims() != first.dims()) throw ShapeError("peak variants of " + id + " have different grids");
    s.inputs.push_back(apply_crop_plan(p, plan));
  }
  const Volume labels = read_nifti(phantom::labels_path(dir, id));
  validate_label_volume(labels);
  if (labels.dims() != first.dims()) throw ShapeError("labels of " + id + " are on a different grid than its peaks");
  s.labels = apply_crop_plan(labels, plan);
  return s;
}

void run_train(const TrainOptions& o, uint64_t seed, std::ostream& out, std::ostream& err) {
  const fs::path data(o.data);
  const auto ids = phantom::read_dataset_ids(data);

  std::vector<std::string> train_ids = split_list(o.train_subjects);
  std::vector<std::string> val_ids = split_list(o.val_subjects);
  if (train_ids.empty() != val_ids.empty()) {
    throw ConfigError("--train-subjects and --val-subjects must be given together");
  }
  if (train_ids.empty()) {
    const auto r = split_list(o.ratios);
    if (r.size() != 3) throw ConfigError("--ratios needs three comma-separated block counts");
    const metrics::FoldRatios ratios{std::stoll(r[0]), std::stoll(r[1]), std::stoll(r[2])};
    const auto folds = metrics::make_folds(ids, o.folds, ratios, seed);
    if (o.fold < 0 || o.fold >= static_cast<int64_t>(folds.size())) throw ConfigError("--fold out of range");
    train_ids = folds[static_cast<size_t>(o.fold)].train;
    val_ids = folds[static_cast<size_t>(o.fold)].validation;
  }

  int64_t size = o.input_size;
  if (size == 0) {
    const Volume probe = read_nifti(phantom::peaks_path(data, train_ids.front(), 0));
    size = round_up(*std::max_element(probe.dims().begin(), probe.dims().end()), int64_t{1} << o.depth);
  }

  auto load = [&](const std::vector<std::string>& list) {
    std::vector<nn::TrainingSubject> out_set;
    for (const auto& id : list) out_set.push_back(load_training_subject(data, id, size, err));
    return out_set;
  };
  std::vector<nn::TrainingSubject> train_set = load(train_ids);
  std::vector<nn::TrainingSubject> val_set = load(val_ids);
  const int64_t k = train_set.front().labels.channels();
  std::vector<std::string> tracts = phantom::read_tract_names(data);
  if (tracts.empty()) tracts = default_tract_names(k);
  if (static_cast<int64_t>(tracts.size()) != k) throw InputError("tracts.txt does not match the label channels");

  nn::UNetConfig mc;
  mc.in_channels = 9;
  mc.out_channels = k;
  mc.depth = o.depth;
  mc.base_channels = o.base_channels;
  mc.filter_size = o.filter_size;
  mc.dropout_p = o.dropout;
  mc.input_size = size;

  if (o.stage == "fusion") {
    if (o.base_weights.empty()) throw ConfigError("--stage fusion needs --base-weights");
    std::vector<std::string> base_tracts;
    const nn::UNet<float> base = nn::load_weights(o.base_weights, &base_tracts);
    if (base.config().out_channels != k || base.config().input_size != size) {
      throw ConfigMismatchError("base weights do not match the dataset's tracts or input size");
    }
    for (auto* set : {&train_set, &val_set})
      for (auto& s : *set)
        for (auto& in : s.inputs) in = fusion::predict_orientations(base, in, o.inference_batch);
    mc.in_channels = 3 * k;
  } else if (o.stage != "segmentation") {
    throw ConfigError("--stage must be segmentation or fusion");
  }
  mc.validate();

  nn::TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.epochs = o.epochs;
  tc.batches_per_epoch = o.batches_per_epoch;
  tc.seed = seed;
  tc.augment = !o.no_augment;
  tc.peak_variant_count = o.peak_variants;
  tc.optimizer.lr = o.lr;
  tc.inference_batch = o.inference_batch;
  tc.validate();

  nn::Rng init(seed);
  nn::UNet<float> model(mc, init);
  out << "training " << o.stage << " model: " << model.parameter_count() << " parameters, " << train_set.size()
      << " training and " << val_set.size() << " validation subjects\n";
  const nn::TrainHistory h = nn::train(model, train_set, val_set, tc, [&](int64_t e, double loss, double dice) {
    out << "epoch " << e << " loss " << format("%.6f", loss) << " val_dice " << format("%.6f", dice) << "\n";
    out.flush();
  });

  nn::save_weights(model, o.out, tracts);
  check_written(o.out);
  const fs::path history = o.history.empty() ? fs::path(o.out).replace_extension(".history.csv") : fs::path(o.history);
  std::string csv = "epoch,loss,val_dice\n";
  for (size_t e = 0; e < h.train_loss.size(); ++e) {
    csv += std::to_string(e) + "," + format("%.6f", h.train_loss[e]) + "," + format("%.6f", h.val_dice[e]) + "\n";
  }
  write_text(history, csv);
  out << "best epoch " << h.best_epoch << " val_dice " << format("%.6f", h.val_dice[static_cast<size_t>(h.best_epoch)])
      << "; weights " << o.out << ", history " << history.string() << "\n";
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
  std::string peaks;
  std::string weights;
  std::string fusion = "mean";
  std::string fusion_weights;
  std::string out;
  std::string probabilities;
  std::string thresholds;
  int connectivity = 26;
  int64_t batch = 8;
};

void run_predict(const PredictOptions& o, std::ostream& out, std::ostream& err) {
  const fusion::Strategy strategy = fusion::parse_strategy(o.fusion);
  if (strategy == fusion::Strategy::Fcnn && o.fusion_weights.empty()) {
    throw ConfigError("--fusion fcnn needs --fusion-weights");
  }
  const auto conn = postprocess::connectivity_from_int(o.connectivity);
  const Volume peaks = read_nifti(o.peaks);
  validate_peak_volume(peaks);
  std::vector<std::string> tracts;
  const nn::UNet<float> model = nn::load_weights(o.weights, &tracts);
  const int64_t k = model.config().out_channels;
  if (tracts.empty()) tracts = default_tract_names(k);
  const postprocess::ThresholdTable table =
      o.thresholds.empty() ? postprocess::ThresholdTable{} : read_threshold_file(o.thresholds);
  const std::vector<double> theta = table.resolve(tracts);

  const int64_t size = model.config().input_size;
  const CropPlan plan = plan_crop_or_pad(peaks, {size, size, size});
  if (plan.loses_content) err << "warning: cropping to " << size << "^3 drops nonzero peak voxels\n";
  const Volume stacked = fusion::predict_orientations(model, apply_crop_plan(peaks, plan), o.batch);

  Volume probs;
  Volume mask;
  switch (strategy) {
    case fusion::Strategy::Mean:
      probs = fusion::fuse_mean(stacked);
      mask = postprocess::binarize(probs, theta);
      break;
    case fusion::Strategy::Majority: {
      // Each orientation votes with its tract's threshold.
      std::vector<double> stacked_theta(static_cast<size_t>(3 * k));
      for (int64_t t = 0; t < k; ++t)
        for (auto orient : kOrientations) stacked_theta[fusion::stacked_channel(t, orient)] = theta[static_cast<size_t>(t)];
      mask = fusion::fuse_majority(postprocess::binarize(stacked, stacked_theta), 0.5);
      break;
    }
    case fusion::Strategy::Fcnn: {
      const nn::UNet<float> fuser = nn::load_weights(o.fusion_weights);
      if (fuser.config().out_channels != k || fuser.config().in_channels != 3 * k) {
        throw ConfigMismatchError("fusion weights do not match the segmentation model");
      }
      probs = fusion::fuse_fcnn(fuser, stacked, o.batch);
      mask = postprocess::binarize(probs, theta);
      break;
    }
  }
  mask = postprocess::largest_component(mask, conn);

  auto to_source = [&](const Volume& v) {
    Volume r = undo_crop(v, plan);
    VolumeHeader h = peaks.header();
    h.channels = v.channels();
    return Volume(h, std::vector<float>(r.data().begin(), r.data().end()));
  };
  write_nifti(to_source(mask), o.out);
  check_written(o.out);
  if (!o.probabilities.empty()) {
    if (strategy == fusion::Strategy::Majority) throw ConfigError("--probabilities is not available with majority fusion");
    write_nifti(to_source(probs), o.probabilities);
    check_written(o.probabilities);
  }
  out << "segmented " << k << " tracts with " << fusion::to_string(strategy) << " fusion: " << o.out << "\n";
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::string pred;
  std::string ref;
  std::string baseline;
  std::string subjects;
  std::string out;
  std::string baseline_out;
  std::string report;
  int64_t comparisons = 1;
};

fs::path find_mask(const fs::path& dir, const std::string& id) {
  for (const char* suffix : {"_seg.nii.gz", "_labels.nii.gz", ".nii.gz", "_seg.nii", "_labels.nii", ".nii"}) {
    const fs::path p = dir / (id + suffix);
    if (fs::exists(p)) return p;
  }
  return {};
}

metrics::ScoreTable score_directory(const fs::path& dir, const fs::path& ref, const std::vector<std::string>& ids,
                                    const std::vector<std::string>& tracts) {
  metrics::ScoreTable table;
  table.tracts = tracts;
  for (const auto& id : ids) {
    const Volume p = read_nifti(find_mask(dir, id));
    const Volume r = read_nifti(find_mask(ref, id));
    validate_label_volume(p);
    validate_label_volume(r);
    table.add(id, metrics::evaluate_subject(p, r));
  }
  return table;
}

void run_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const fs::path pred(o.pred), ref(o.ref);
  std::vector<std::string> ids = split_list(o.subjects);
  if (ids.empty()) {
    if (!fs::exists(ref / "dataset.txt")) throw InputError("no --subjects given and no dataset.txt in " + o.ref);
    for (const auto& id : phantom::read_dataset_ids(ref))
      if (!find_mask(pred, id).empty()) ids.push_back(id);
  }
  if (ids.empty()) throw InputError("no predictions in " + o.pred + " match subjects of " + o.ref);
  for (const auto& id : ids) {
    if (find_mask(pred, id).empty()) throw InputError("missing prediction for " + id + " in " + o.pred);
    if (find_mask(ref, id).empty()) throw InputError("missing reference for " + id + " in " + o.ref);
  }
  std::vector<std::string> tracts = phantom::read_tract_names(ref);
  if (tracts.empty()) tracts = default_tract_names(read_nifti(find_mask(ref, ids.front())).channels());

  const metrics::ScoreTable method = score_directory(pred, ref, ids, tracts);
  const fs::path base_dir = o.baseline.empty() ? ref : fs::path(o.baseline);
  for (const auto& id : ids)
    if (find_mask(base_dir, id).empty()) throw InputError("missing baseline for " + id + " in " + base_dir.string());
  const metrics::ScoreTable baseline = score_directory(base_dir, ref, ids, tracts);

  method.write_csv(o.out);
  check_written(o.out);
  if (!o.baseline_out.empty()) {
    baseline.write_csv(o.baseline_out);
    check_written(o.baseline_out);
  }
  const auto a = method.subject_means();
  const auto b = baseline.subject_means();
  const metrics::WilcoxonResult w = metrics::wilcoxon_test(a, b);
  double mean_a = 0.0, mean_b = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i] / static_cast<double>(a.size());
    mean_b += b[i] / static_cast<double>(b.size());
  }
  std::ostringstream rep;
  rep << "subjects: " << ids.size() << "\n"
      << "method_mean_dice: " << format("%.6f", mean_a) << "\n"
      << "baseline: " << base_dir.string() << "\n"
      << "baseline_mean_dice: " << format("%.6f", mean_b) << "\n"
      << "wilcoxon_statistic: " << format("%.1f", w.statistic) << "\n"
      << "nonzero_pairs: " << w.n << "\n"
      << "method: " << (w.exact ? "exact" : "normal approximation") << "\n"
      << "p_raw: " << format("%.6g", w.p) << "\n"
      << "p_bonferroni: " << format("%.6g", metrics::bonferroni(w.p, o.comparisons)) << "\n"
      << "m: " << o.comparisons << "\n";
  if (!o.report.empty()) {
    write_text(o.report, rep.str());
    check_written(o.report);
  }
  out << rep.str();
}

// ---------------------------------------------------------------- streamlines

struct FilterOptions {
  std::string in;
  std::string out;
  std::string reference;
  double cluster_threshold = 5.0;
  int64_t min_cluster_size = 0;
  double hairpin_window = 30.0;
  double hairpin_angle = 150.0;
  bool no_hairpins = false;
  int64_t min_density = 0;
  std::string report;
};

void run_filter(const FilterOptions& o, std::ostream& out) {
  const VolumeHeader ref = read_nifti(o.reference).header();
  streamtools::Tractogram t = streamtools::read_tck(o.in, ref);
  std::ostringstream rep;
  rep << "input: " << t.size() << "\n";
  if (o.min_cluster_size > 1) {
    const auto clusters = streamtools::quickbundles(t, o.cluster_threshold);
    const size_t before = t.size();
    t = streamtools::filter_small_clusters(t, clusters, o.min_cluster_size);
    rep << "clusters: " << clusters.size() << "\n"
        << "removed_small_clusters: " << before - t.size() << "\n";
  }
  if (!o.no_hairpins) {
    const size_t before = t.size();
    t = streamtools::filter_hairpins(t, o.hairpin_window, o.hairpin_angle);
    rep << "removed_hairpins: " << before - t.size() << "\n";
  }
  if (o.min_density > 0) {
    const size_t before = t.size();
    t = streamtools::filter_by_density(t, o.min_density);
    rep << "removed_low_density: " << before - t.size() << "\n";
  }
  rep << "output: " << t.size() << "\n";
  streamtools::write_tck(t, o.out);
  check_written(o.out);
  if (!o.report.empty()) {
    write_text(o.report, rep.str());
    check_written(o.report);
  }
  out << rep.str();
}

struct TrackOptions {
  std::string mask;
  std::string peaks;
  std::string out;
  int64_t channel = 0;
  int64_t seeds_per_voxel = 1;
  double step = 0.0;
  double max_angle = 60.0;
  double max_length = 300.0;
  int64_t min_points = 3;
  std::string endpoints_a;
  std::string endpoints_b;
};

Volume single_channel_mask(const Volume& v, int64_t channel, const std::string& what) {
  if (channel < 0 || channel >= v.channels()) throw ParameterError(what + " has no channel " + std::to_string(channel));
  VolumeHeader h = v.header();
  h.channels = 1;
  Volume m(h);
  const auto src = v.channel(channel);
  auto dst = m.data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != 0.0f ? 1.0f : 0.0f;
  return m;
}

void run_mask2tract(const TrackOptions& o, uint64_t seed, std::ostream& out) {
  const Volume mask = single_channel_mask(read_nifti(o.mask), o.channel, o.mask);
  const Volume peaks = read_nifti(o.peaks);
  validate_peak_volume(peaks);
  Volume a, b;
  streamtools::EndpointRegions regions;
  if (!o.endpoints_a.empty()) {
    a = single_channel_mask(read_nifti(o.endpoints_a), 0, o.endpoints_a);
    regions.a = &a;
  }
  if (!o.endpoints_b.empty()) {
    b = single_channel_mask(read_nifti(o.endpoints_b), 0, o.endpoints_b);
    regions.b = &b;
  }
  streamtools::TrackingConfig cfg;
  cfg.seeds_per_voxel = o.seeds_per_voxel;
  cfg.step_mm = o.step;
  cfg.max_angle_deg = o.max_angle;
  cfg.max_length_mm = o.max_length;
  cfg.min_points = o.min_points;
  std::mt19937_64 rng(seed);
  const streamtools::Tractogram t = streamtools::track_within_mask(peaks, mask, cfg, rng, regions);
  streamtools::write_tck(t, o.out);
  check_written(o.out);
  out << "tracked " << t.size() << " streamlines: " << o.out << "\n";
}

// ---------------------------------------------------------------- parsing

bool has_option(const std::vector<std::string>& args, const std::string& name) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == name || a.rfind(name + "=", 0) == 0; });
}

// Config entries become flags unless the command line already sets them.
std::vector<std::string> merge_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string config_path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  const auto entries = read_config_file(config_path);

  CLI::App* sub = nullptr;
  size_t sub_pos = args.size();
  for (size_t i = 0; i < args.size() && !sub; ++i) {
    for (CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
        break;
      }
    }
  }
  std::vector<std::string> front, back;
  for (const auto& [raw_key, value] : entries) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (has_option(args, flag)) continue;
    if (key == "config") throw ConfigError("a config file cannot name another config file");
    if (app.get_option_no_throw(flag) != nullptr) {
      front.push_back(flag + "=" + value);
    } else if (sub && sub->get_option_no_throw(flag) != nullptr) {
      back.push_back(flag + "=" + value);
    } else {
      throw CLI::ExtrasError("config file key '" + raw_key + "' is not an option of this command",
                             CLI::ExitCodes::ExtrasError);
    }
  }
  std::vector<std::string> merged = front;
  merged.insert(merged.end(), args.begin(), args.begin() + static_cast<std::ptrdiff_t>(std::min(sub_pos + 1, args.size())));
  merged.insert(merged.end(), back.begin(), back.end());
  if (sub_pos + 1 < args.size()) merged.insert(merged.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos + 1), args.end());
  return merged;
}

}  // namespace

void configure_runtime(int threads) {
  if (threads > 0) {
    omp_set_num_threads(threads);
    Eigen::setNbThreads(threads);
  }
#if defined(__SSE__)
#pragma omp parallel
  { _mm_setcsr(_mm_getcsr() | 0x8040); }
#endif
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

postprocess::ThresholdTable read_threshold_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open threshold file " + path.string());
  postprocess::ThresholdTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    double value = 0.0;
    std::string extra;
    if (!(ss >> name >> value) || (ss >> extra)) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'tract_name value'");
    }
    if (name == "default") {
      table.default_theta = value;
    } else {
      table.per_tract[name] = value;
    }
  }
  return table;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tract segmentation from fibre orientation peaks", "wmseg"};
  app.require_subcommand(1);
  uint64_t seed = 0;
  int threads = 0;
  std::string config;
  app.add_option("--seed", seed, "Seed for every random choice");
  app.add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", config, "File of 'key = value' defaults; flags override them");

  PhantomOptions ph;
  auto* cph = app.add_subcommand("phantom", "Write a synthetic dataset of peak images and tract masks");
  cph->add_option("--out", ph.out, "Output directory")->required();
  cph->add_option("--subjects", ph.subjects, "Number of subjects")->check(CLI::PositiveNumber);
  cph->add_option("--grid", ph.grid, "Grid side in voxels");
  cph->add_option("--noise", ph.noise, "Peak noise std of the first variant");
  cph->add_option("--variants", ph.variants, "Peak images per subject")->check(CLI::PositiveNumber);

  TrainOptions tr;
  auto* ctr = app.add_subcommand("train", "Train a segmentation or fusion network");
  ctr->add_option("--data", tr.data, "Dataset directory")->required();
  ctr->add_option("--out", tr.out, "Weights file")->required();
  ctr->add_option("--history", tr.history, "History CSV (default: next to the weights)");
  ctr->add_option("--stage", tr.stage, "segmentation or fusion")->check(CLI::IsMember({"segmentation", "fusion"}));
  ctr->add_option("--base-weights", tr.base_weights, "Segmentation weights feeding the fusion stage");
  ctr->add_option("--train-subjects", tr.train_subjects, "Comma-separated training ids");
  ctr->add_option("--val-subjects", tr.val_subjects, "Comma-separated validation ids");
  ctr->add_option("--folds", tr.folds, "Cross-validation folds");
  ctr->add_option("--fold", tr.fold, "Fold to train");
  ctr->add_option("--ratios", tr.ratios, "Train,validation,test blocks per fold");
  ctr->add_option("--depth", tr.depth, "Pooling levels");
  ctr->add_option("--base-channels", tr.base_channels, "Filters at the first level");
  ctr->add_option("--filter-size", tr.filter_size, "Convolution kernel size");
  ctr->add_option("--dropout", tr.dropout, "Dropout probability");
  ctr->add_option("--input-size", tr.input_size, "Network input side (default: fitted to the data)");
  ctr->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber);
  ctr->add_option("--batches-per-epoch", tr.batches_per_epoch, "Batches per epoch")->check(CLI::PositiveNumber);
  ctr->add_option("--batch-size", tr.batch_size, "Slices per batch")->check(CLI::PositiveNumber);
  ctr->add_option("--lr", tr.lr, "Adamax learning rate");
  ctr->add_flag("--no-augment", tr.no_augment, "Disable data augmentation");
  ctr->add_option("--peak-variants", tr.peak_variants, "Peak variants to sample from (0: all)");
  ctr->add_option("--inference-batch", tr.inference_batch, "Slices per inference batch");

  PredictOptions pr;
  auto* cpr = app.add_subcommand("predict", "Segment every tract of one subject");
  cpr->add_option("--peaks", pr.peaks, "Peak image")->required();
  cpr->add_option("--weights", pr.weights, "Segmentation weights")->required();
  cpr->add_option("--fusion", pr.fusion, "Orientation fusion")->check(CLI::IsMember({"mean", "majority", "fcnn"}));
  cpr->add_option("--fusion-weights", pr.fusion_weights, "Fusion network weights (fcnn)");
  cpr->add_option("--out", pr.out, "Output mask image")->required();
  cpr->add_option("--probabilities", pr.probabilities, "Also write fused probabilities");
  cpr->add_option("--thresholds", pr.thresholds, "Per-tract thresholds file");
  cpr->add_option("--connectivity", pr.connectivity, "Neighbourhood for the largest component")
      ->check(CLI::IsMember({6, 18, 26}));
  cpr->add_option("--batch", pr.batch, "Slices per inference batch")->check(CLI::PositiveNumber);

  EvaluateOptions ev;
  auto* cev = app.add_subcommand("evaluate", "Score predictions against reference masks");
  cev->add_option("--pred", ev.pred, "Prediction directory")->required();
  cev->add_option("--ref", ev.ref, "Reference directory")->required();
  cev->add_option("--baseline", ev.baseline, "Second prediction directory to compare against (default: --ref)");
  cev->add_option("--subjects", ev.subjects, "Comma-separated ids (default: the reference dataset)");
  cev->add_option("--out", ev.out, "Score table CSV")->required();
  cev->add_option("--baseline-out", ev.baseline_out, "Baseline score table CSV");
  cev->add_option("--report", ev.report, "Significance report file");
  cev->add_option("--comparisons", ev.comparisons, "Number of tests for the Bonferroni correction")
      ->check(CLI::PositiveNumber);

  FilterOptions fi;
  auto* cfi = app.add_subcommand("filter-streamlines", "Clean a tractogram");
  cfi->add_option("--in", fi.in, "Input .tck")->required();
  cfi->add_option("--out", fi.out, "Output .tck")->required();
  cfi->add_option("--reference", fi.reference, "Image defining the voxel grid")->required();
  cfi->add_option("--cluster-threshold", fi.cluster_threshold, "QuickBundles distance threshold in mm");
  cfi->add_option("--min-cluster-size", fi.min_cluster_size, "Drop clusters smaller than this (0: off)");
  cfi->add_option("--hairpin-window", fi.hairpin_window, "Arc length window in mm");
  cfi->add_option("--hairpin-angle", fi.hairpin_angle, "Turning angle limit in degrees");
  cfi->add_flag("--no-hairpins", fi.no_hairpins, "Skip the hairpin filter");
  cfi->add_option("--min-density", fi.min_density, "Minimum streamlines per visited voxel (0: off)");
  cfi->add_option("--report", fi.report, "Removal counts file");

  TrackOptions tk;
  auto* ctk = app.add_subcommand("mask2tract", "Track streamlines that stay inside a tract mask");
  ctk->add_option("--mask", tk.mask, "Tract mask image")->required();
  ctk->add_option("--peaks", tk.peaks, "Peak image")->required();
  ctk->add_option("--out", tk.out, "Output .tck")->required();
  ctk->add_option("--channel", tk.channel, "Mask channel to use");
  ctk->add_option("--seeds-per-voxel", tk.seeds_per_voxel, "Seeds per mask voxel")->check(CLI::PositiveNumber);
  ctk->add_option("--step", tk.step, "Step in mm (0: half the voxel size)");
  ctk->add_option("--max-angle", tk.max_angle, "Largest turn per step in degrees");
  ctk->add_option("--max-length", tk.max_length, "Longest streamline in mm");
  ctk->add_option("--min-points", tk.min_points, "Shortest streamline in points");
  ctk->add_option("--endpoints-a", tk.endpoints_a, "Region one end must reach");
  ctk->add_option("--endpoints-b", tk.endpoints_b, "Region the other end must reach");

  for (CLI::App* s : app.get_subcommands({})) s->fallthrough();

  if (args.empty()) {
    err << app.help();
    return kUsageError;
  }
  try {
    std::vector<std::string> merged = merge_config(args, app);
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    err << "run 'wmseg --help' for the list of commands and flags\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return dynamic_cast<const FormatError*>(&e) ? kFormatError : kRuntimeError;
  }

  try {
    configure_runtime(threads);
    if (cph->parsed()) run_phantom(ph, seed, out);
    if (ctr->parsed()) run_train(tr, seed, out, err);
    if (cpr->parsed()) run_predict(pr, out, err);
    if (cev->parsed()) run_evaluate(ev, out);
    if (cfi->parsed()) run_filter(fi, out);
    if (ctk->parsed()) run_mask2tract(tk, seed, out);
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kFormatError;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace wmseg::cli
