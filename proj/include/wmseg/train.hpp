#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wmseg/adamax.hpp"
#include "wmseg/augment.hpp"
#include "wmseg/unet.hpp"
#include "wmseg/volume.hpp"

namespace wmseg::nn {

/// One subject's network inputs (one volume per peak variant) and label
/// volume, all cubes of side input_size.
struct TrainingSubject {
  std::string id;
  std::vector<Volume> inputs;
  Volume labels;
};

struct TrainConfig {
  int64_t batch_size = 56;
  int64_t epochs = 500;
  int64_t batches_per_epoch = 162;
  uint64_t seed = 0;
  bool augment = true;
  augment::AugmentConfig augmentation;
  // Number of input variants to sample from; 0 uses every variant present.
  int64_t peak_variant_count = 0;
  AdamaxConfig optimizer;
  double threshold = 0.5;
  int64_t inference_batch = 8;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_dice;
  int64_t best_epoch = -1;
};

using EpochCallback = std::function<void(int64_t epoch, double loss, double dice)>;

/// Draws batch `batch` of epoch `epoch`: every sample picks subject,
/// orientation, slice and variant uniformly and is augmented with its own
/// generator seeded from (seed, epoch, batch, sample), so the batch does not
/// depend on thread count.
std::pair<Tensor<float>, Tensor<float>> sample_batch(const std::vector<TrainingSubject>& subjects,
                                                     const TrainConfig& cfg, int64_t epoch, int64_t batch);

/// One optimizer step on a fixed batch; returns the loss before the update.
double train_step(UNet<float>& model, Adamax<float>& opt, const Tensor<float>& x, const Tensor<float>& y,
                  bool training, Rng& rng);

/// Mean Dice over subjects (each the mean over tracts) of the thresholded
/// single-orientation prediction.
double validation_dice(const UNet<float>& model, const std::vector<TrainingSubject>& subjects,
                       Orientation orientation, double threshold, int64_t batch = 8);

/// Runs the training loop. After epoch e the validation subjects are scored
/// on orientation e mod 3 (sagittal, coronal, axial); the model ends holding
/// the weights of the first epoch with the highest validation Dice.
TrainHistory train(UNet<float>& model, const std::vector<TrainingSubject>& train_set,
                   const std::vector<TrainingSubject>& val_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

}  // namespace wmseg::nn
