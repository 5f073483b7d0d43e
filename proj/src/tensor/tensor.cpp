#include "wmseg/tensor.hpp"

#include <sstream>

#include "wmseg/error.hpp"

namespace wmseg::nn {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : s_(std::make_shared<TensorStorage<T>>()) {
  s_->values.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : s_(std::make_shared<TensorStorage<T>>()) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("tensor value count does not match shape " + shape_string(shape));
  }
  s_->shape = std::move(shape);
  s_->values = std::move(values);
  s_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.s_->values.begin(), t.s_->values.end(), value);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <class T>
T Tensor<T>::item() const {
  if (s_->values.size() != 1) throw ContractError("item() on a tensor with " + std::to_string(numel()) + " elements");
  return s_->values[0];
}

template <class T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
  return s_->grad;
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(s_->shape, s_->values, s_->requires_grad);
  t.s_->grad = s_->grad;
  return t;
}

template <class T>
void Tape<T>::record(std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn backward) {
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(backward)});
}

template <class T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1) throw ContractError("backward() requires a scalar loss");
  Tensor<T> seed = loss;
  auto g = seed.ensure_grad();
  g[0] += T(1);
  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&, Tape<float>&);
template void backward<double>(const Tensor<double>&, Tape<double>&);

}  // namespace wmseg::nn
