#include "wmseg/unet.hpp"

#include <cmath>
#include <cstring>

#include "wmseg/error.hpp"

namespace wmseg::nn {

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be positive");
  if (depth < 1 || depth > 16) throw ConfigError("depth must lie in [1,16]");
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
  if (filter_size < 1 || filter_size % 2 == 0) throw ConfigError("filter_size must be odd");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0,1)");
  if (input_size < 1 || input_size % (int64_t{1} << depth) != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" + std::to_string(depth));
  }
}

int64_t unet_parameter_count(const UNetConfig& cfg) {
  cfg.validate();
  const int64_t k2 = cfg.filter_size * cfg.filter_size;
  auto conv = [k2](int64_t cin, int64_t cout) { return cout * cin * k2 + cout; };
  int64_t total = 0;
  int64_t cin = cfg.in_channels;
  for (int64_t l = 0; l <= cfg.depth; ++l) {
    const int64_t c = cfg.channels_at(l);
    total += conv(cin, c) + conv(c, c);
    cin = c;
  }
  for (int64_t l = cfg.depth - 1; l >= 0; --l) {
    const int64_t c = cfg.channels_at(l);
    total += 2 * c * c * 4;  // upconv from 2c to c
    total += conv(2 * c, c) + conv(c, c);
  }
  total += cfg.out_channels * cfg.channels_at(0) + cfg.out_channels;
  return total;
}

template <class T>
size_t UNet<T>::add_param(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape), true);
  if (stddev > 0.0) {
    std::normal_distribution<double> g(0.0, stddev);
    for (auto& v : t.values()) v = static_cast<T>(g(rng));
  }
  params_.push_back({std::move(name), t});
  return params_.size() - 1;
}

template <class T>
typename UNet<T>::Conv UNet<T>::add_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k, Rng& rng) {
  const double he = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  Conv c;
  c.weight = add_param(name + ".weight", Shape{cout, cin, k, k}, he, rng);
  c.bias = add_param(name + ".bias", Shape{cout}, 0.0, rng);
  return c;
}

template <class T>
UNet<T>::UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int64_t k = cfg_.filter_size;
  int64_t cin = cfg_.in_channels;
  for (int64_t l = 0; l <= cfg_.depth; ++l) {
    const int64_t c = cfg_.channels_at(l);
    const std::string name = "enc" + std::to_string(l);
    Block b;
    b.first = add_conv(name + ".conv1", cin, c, k, rng);
    b.second = add_conv(name + ".conv2", c, c, k, rng);
    encoder_.push_back(b);
    cin = c;
  }
  up_.resize(static_cast<size_t>(cfg_.depth));
  decoder_.resize(static_cast<size_t>(cfg_.depth));
  for (int64_t l = cfg_.depth - 1; l >= 0; --l) {
    const int64_t c = cfg_.channels_at(l);
    const std::string name = "dec" + std::to_string(l);
    up_[static_cast<size_t>(l)] = add_param("up" + std::to_string(l) + ".weight", Shape{2 * c, c, 2, 2},
                                            std::sqrt(2.0 / static_cast<double>(2 * c)), rng);
    Block b;
    b.first = add_conv(name + ".conv1", 2 * c, c, k, rng);
    b.second = add_conv(name + ".conv2", c, c, k, rng);
    decoder_[static_cast<size_t>(l)] = b;
  }
  head_ = add_conv("head", cfg_.channels_at(0), cfg_.out_channels, 1, rng);
}

template <class T>
Tensor<T> UNet<T>::apply_conv(Tape<T>* tape, const Tensor<T>& x, const Conv& c, int pad) const {
  return conv2d(tape, x, params_[c.weight].tensor, params_[c.bias].tensor, pad);
}

template <class T>
Tensor<T> UNet<T>::apply_block(Tape<T>* tape, const Tensor<T>& x, const Block& b) const {
  const int pad = static_cast<int>(cfg_.filter_size / 2);
  Tensor<T> y = relu(tape, apply_conv(tape, x, b.first, pad));
  return relu(tape, apply_conv(tape, y, b.second, pad));
}

template <class T>
Tensor<T> UNet<T>::forward(Tape<T>* tape, const Tensor<T>& batch, bool training, Rng& rng) const {
  if (batch.rank() != 4 || batch.dim(1) != cfg_.in_channels || batch.dim(2) != cfg_.input_size ||
      batch.dim(3) != cfg_.input_size) {
    throw ShapeError("network input must be [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.input_size) + "," + std::to_string(cfg_.input_size) + "], got " +
                     shape_string(batch.shape()));
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> x = batch;
  for (int64_t l = 0; l <= cfg_.depth; ++l) {
    x = apply_block(tape, x, encoder_[static_cast<size_t>(l)]);
    if (l >= cfg_.depth - 1) x = dropout(tape, x, cfg_.dropout_p, training, rng);
    if (l < cfg_.depth) {
      skips.push_back(x);
      x = pool2x(tape, x);
    }
  }
  for (int64_t l = cfg_.depth - 1; l >= 0; --l) {
    x = upconv2x(tape, x, params_[up_[static_cast<size_t>(l)]].tensor);
    x = concat_channels(tape, x, skips[static_cast<size_t>(l)]);
    x = apply_block(tape, x, decoder_[static_cast<size_t>(l)]);
  }
  return sigmoid(tape, apply_conv(tape, x, head_, 0));
}

template <class T>
Tensor<T> UNet<T>::predict(const Tensor<T>& batch) const {
  Rng unused(0);
  return forward(nullptr, batch, false, unused);
}

template <class T>
std::vector<Tensor<T>> UNet<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <class T>
int64_t UNet<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <class T>
void UNet<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <class T>
std::vector<std::vector<T>> UNet<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  for (const auto& p : params_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

template <class T>
void UNet<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size()) throw ShapeError("snapshot does not match the model");
  for (size_t i = 0; i < params_.size(); ++i) {
    auto v = params_[i].tensor.values();
    if (values[i].size() != v.size()) throw ShapeError("snapshot does not match parameter " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), v.begin());
  }
}

Tensor<float> slices_to_tensor(const std::vector<Slice2D>& slices) {
  if (slices.empty()) throw ShapeError("no slices to batch");
  const auto& s0 = slices.front();
  Tensor<float> t(Shape{static_cast<int64_t>(slices.size()), s0.channels, s0.height, s0.width});
  auto out = t.values();
  const size_t per = s0.data.size();
  for (size_t n = 0; n < slices.size(); ++n) {
    const auto& s = slices[n];
    if (s.width != s0.width || s.height != s0.height || s.channels != s0.channels) {
      throw ShapeError("slices in a batch must share their shape");
    }
    std::memcpy(out.data() + n * per, s.data.data(), per * sizeof(float));
  }
  return t;
}

Slice2D tensor_to_slice(const Tensor<float>& t, int64_t n) {
  if (t.rank() != 4 || n < 0 || n >= t.dim(0)) throw ShapeError("tensor_to_slice: bad tensor or index");
  Slice2D s(t.dim(3), t.dim(2), t.dim(1));
  const auto v = t.values();
  std::memcpy(s.data.data(), v.data() + static_cast<size_t>(n) * s.data.size(), s.data.size() * sizeof(float));
  return s;
}

Volume predict_orientation(const UNet<float>& model, const Volume& input, Orientation orientation,
                           int64_t batch_size) {
  const auto& cfg = model.config();
  const auto& d = input.dims();
  if (d[0] != cfg.input_size || d[1] != cfg.input_size || d[2] != cfg.input_size) {
    throw ShapeError("prediction input must be a cube of side " + std::to_string(cfg.input_size));
  }
  if (input.channels() != cfg.in_channels) {
    throw ShapeError("prediction input must have " + std::to_string(cfg.in_channels) + " channels");
  }
  if (batch_size < 1) throw ParameterError("batch size must be positive");
  VolumeHeader h = input.header();
  h.channels = cfg.out_channels;
  Volume out(h);
  const int64_t n = d[static_cast<size_t>(slicing_axis(orientation))];
  for (int64_t first = 0; first < n; first += batch_size) {
    const int64_t last = std::min(n, first + batch_size);
    std::vector<Slice2D> slices;
    for (int64_t i = first; i < last; ++i) slices.push_back(extract_slice(input, orientation, i));
    const Tensor<float> y = model.predict(slices_to_tensor(slices));
    for (int64_t i = first; i < last; ++i) insert_slice(out, orientation, i, tensor_to_slice(y, i - first));
  }
  return out;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace wmseg::nn
