#include "wmseg/train.hpp"

#include <algorithm>

#include "wmseg/error.hpp"
#include "wmseg/metrics.hpp"

namespace wmseg::nn {

namespace {

Rng derived_rng(uint64_t seed, int64_t epoch, int64_t batch, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(epoch),
                    static_cast<uint32_t>(batch), static_cast<uint32_t>(stream)};
  return Rng(seq);
}

constexpr uint64_t kDropoutStream = 0xffffffffu;

int64_t variant_count(const std::vector<TrainingSubject>& subjects, const TrainConfig& cfg) {
  int64_t available = INT64_MAX;
  for (const auto& s : subjects) available = std::min<int64_t>(available, static_cast<int64_t>(s.inputs.size()));
  if (cfg.peak_variant_count == 0) return available;
  if (cfg.peak_variant_count > available) {
    throw ConfigError("peak_variant_count " + std::to_string(cfg.peak_variant_count) + " exceeds the " +
                      std::to_string(available) + " variants available");
  }
  return cfg.peak_variant_count;
}

void check_subjects(const std::vector<TrainingSubject>& subjects, const UNetConfig& mc, const char* what) {
  if (subjects.empty()) throw ConfigError(std::string("empty ") + what + " set");
  const std::array<int64_t, 3> cube{mc.input_size, mc.input_size, mc.input_size};
  for (const auto& s : subjects) {
    if (s.inputs.empty()) throw ConfigError("subject " + s.id + " has no input volumes");
    for (const auto& v : s.inputs) {
      if (v.dims() != cube || v.channels() != mc.in_channels) {
        throw ShapeError("subject " + s.id + " input does not match the network input shape");
      }
    }
    if (s.labels.dims() != cube || s.labels.channels() != mc.out_channels) {
      throw ShapeError("subject " + s.id + " labels do not match the network output shape");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1 || batches_per_epoch < 1) {
    throw ConfigError("batch_size, epochs and batches_per_epoch must be positive");
  }
  if (peak_variant_count < 0) throw ConfigError("peak_variant_count must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (inference_batch < 1) throw ConfigError("inference_batch must be positive");
  optimizer.validate();
  if (augment) augmentation.validate();
}

std::pair<Tensor<float>, Tensor<float>> sample_batch(const std::vector<TrainingSubject>& subjects,
                                                     const TrainConfig& cfg, int64_t epoch, int64_t batch) {
  if (subjects.empty()) throw ConfigError("empty training set");
  const int64_t variants = variant_count(subjects, cfg);
  const auto n = static_cast<size_t>(cfg.batch_size);
  std::vector<Slice2D> images(n), labels(n);
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < n; ++i) {
    Rng rng = derived_rng(cfg.seed, epoch, batch, i);
    const auto& s = subjects[std::uniform_int_distribution<size_t>(0, subjects.size() - 1)(rng)];
    const Orientation o = kOrientations[std::uniform_int_distribution<int>(0, 2)(rng)];
    const int64_t extent = s.labels.dims()[static_cast<size_t>(slicing_axis(o))];
    const int64_t index = std::uniform_int_distribution<int64_t>(0, extent - 1)(rng);
    const auto variant = std::uniform_int_distribution<int64_t>(0, variants - 1)(rng);
    Slice2D img = extract_slice(s.inputs[static_cast<size_t>(variant)], o, index);
    Slice2D lab = extract_slice(s.labels, o, index);
    if (cfg.augment) augment::augment_sample(img, lab, o, cfg.augmentation, rng);
    images[i] = std::move(img);
    labels[i] = std::move(lab);
  }
  return {slices_to_tensor(images), slices_to_tensor(labels)};
}

double train_step(UNet<float>& model, Adamax<float>& opt, const Tensor<float>& x, const Tensor<float>& y,
                  bool training, Rng& rng) {
  model.zero_grad();
  Tape<float> tape;
  const Tensor<float> out = model.forward(&tape, x, training, rng);
  const Tensor<float> loss = bce_loss(&tape, out, y);
  backward(loss, tape);
  tape.clear();
  opt.step();
  return loss.item();
}

double validation_dice(const UNet<float>& model, const std::vector<TrainingSubject>& subjects,
                       Orientation orientation, double threshold, int64_t batch) {
  if (subjects.empty()) throw ConfigError("empty validation set");
  double total = 0.0;
  for (const auto& s : subjects) {
    Volume pred = predict_orientation(model, s.inputs.front(), orientation, batch);
    for (auto& v : pred.data()) v = v >= threshold ? 1.0f : 0.0f;
    total += metrics::evaluate_subject(pred, s.labels).mean;
  }
  return total / static_cast<double>(subjects.size());
}

TrainHistory train(UNet<float>& model, const std::vector<TrainingSubject>& train_set,
                   const std::vector<TrainingSubject>& val_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  check_subjects(train_set, model.config(), "training");
  check_subjects(val_set, model.config(), "validation");
  variant_count(train_set, cfg);

  Adamax<float> opt(model.parameter_tensors(), cfg.optimizer);
  TrainHistory history;
  std::vector<std::vector<float>> best;
  double best_dice = -1.0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int64_t b = 0; b < cfg.batches_per_epoch; ++b) {
      auto [x, y] = sample_batch(train_set, cfg, epoch, b);
      Rng drop = derived_rng(cfg.seed, epoch, b, kDropoutStream);
      loss_sum += train_step(model, opt, x, y, true, drop);
    }
    const double loss = loss_sum / static_cast<double>(cfg.batches_per_epoch);
    const double dice =
        validation_dice(model, val_set, kOrientations[static_cast<size_t>(epoch % 3)], cfg.threshold, cfg.inference_batch);
    history.train_loss.push_back(loss);
    history.val_dice.push_back(dice);
    if (dice > best_dice) {
      best_dice = dice;
      history.best_epoch = epoch;
      best = model.snapshot();
    }
    if (on_epoch) on_epoch(epoch, loss, dice);
  }
  model.zero_grad();
  model.restore(best);
  return history;
}

}  // namespace wmseg::nn
