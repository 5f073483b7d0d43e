#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmseg/ops.hpp"
#include "wmseg/tensor.hpp"
#include "wmseg/volume.hpp"

namespace wmseg::nn {

struct UNetConfig {
  int64_t in_channels = 9;
  int64_t out_channels = 72;
  int64_t depth = 4;  // pooling levels
  int64_t base_channels = 64;
  int64_t filter_size = 3;
  double dropout_p = 0.4;
  int64_t input_size = 144;

  /// Throws ConfigError unless every field is in range, filter_size is odd
  /// and input_size is divisible by 2^depth.
  void validate() const;
  int64_t channels_at(int64_t level) const { return base_channels << level; }
  bool operator==(const UNetConfig&) const = default;
};

/// Closed-form parameter count of build_unet(cfg).
int64_t unet_parameter_count(const UNetConfig& cfg);

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Encoder-decoder segmentation network. Level l of the encoder has two
/// conv+ReLU layers with base_channels * 2^l filters followed by 2x2 max
/// pooling; the bottleneck sits at level `depth`. Dropout follows the two
/// deepest encoder blocks. Each decoder level upsamples, concatenates the
/// matching encoder output and applies two conv+ReLU layers. A 1x1 conv and
/// a sigmoid produce one probability map per output channel.
template <class T>
class UNet {
 public:
  /// He-normal weights drawn from rng, zero biases.
  UNet(const UNetConfig& cfg, Rng& rng);

  const UNetConfig& config() const { return cfg_; }

  /// batch is [N, in_channels, input_size, input_size]; the result is
  /// [N, out_channels, input_size, input_size]. rng drives dropout and is
  /// untouched in eval mode.
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& batch, bool training, Rng& rng) const;
  Tensor<T> predict(const Tensor<T>& batch) const;

  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_tensors() const;
  int64_t parameter_count() const;
  void zero_grad();

  /// Deep copy of every parameter value.
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  struct Conv {
    size_t weight;
    size_t bias;
  };
  struct Block {
    Conv first;
    Conv second;
  };

  size_t add_param(std::string name, Shape shape, double stddev, Rng& rng);
  Conv add_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k, Rng& rng);
  Tensor<T> apply_conv(Tape<T>* tape, const Tensor<T>& x, const Conv& c, int pad) const;
  Tensor<T> apply_block(Tape<T>* tape, const Tensor<T>& x, const Block& b) const;

  UNetConfig cfg_;
  std::vector<NamedParameter<T>> params_;
  std::vector<Block> encoder_;  // depth + 1 entries, last is the bottleneck
  std::vector<size_t> up_;      // upconv kernel per decoder level
  std::vector<Block> decoder_;
  Conv head_{};
};

template <class T>
UNet<T> build_unet(const UNetConfig& cfg, Rng& rng) {
  return UNet<T>(cfg, rng);
}

/// Flattens slices into a [N, C, H, W] tensor.
Tensor<float> slices_to_tensor(const std::vector<Slice2D>& slices);

/// Splits sample n of a [N, C, H, W] tensor back into a slice.
Slice2D tensor_to_slice(const Tensor<float>& t, int64_t n);

/// Slice-by-slice probability volume for one orientation. The volume must
/// be a cube of side input_size with in_channels channels.
Volume predict_orientation(const UNet<float>& model, const Volume& input, Orientation orientation,
                           int64_t batch_size = 8);

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace wmseg::nn
