#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wmseg::nn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major array taking part in reverse-mode differentiation.
/// Copies share storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int64_t dim(size_t i) const { return s_->shape.at(i); }
  size_t rank() const { return s_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(s_->values.size()); }

  // Views into storage; deleted on temporaries so they cannot dangle.
  std::span<T> values() & { return s_->values; }
  std::span<const T> values() const& { return s_->values; }
  std::span<const T> values() const&& = delete;
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() & { return s_->grad; }
  std::span<const T> grad() const& { return s_->grad; }
  std::span<const T> grad() const&& = delete;
  /// Allocates a zero gradient buffer if none exists; returns it. The
  /// gradient is accumulation state of the shared storage, so this is
  /// available through const handles.
  std::span<T> ensure_grad() const;
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/// Records operations in execution order so backward() can replay their
/// gradient rules in reverse.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn backward);
  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;

  template <class U>
  friend void backward(const Tensor<U>& loss, Tape<U>& tape);
};

/// Seeds d(loss)/d(loss) = 1 and runs every reachable gradient rule once, in
/// reverse recording order. Gradients accumulate into existing buffers.
/// Throws ContractError if loss is not a scalar.
template <class T>
void backward(const Tensor<T>& loss, Tape<T>& tape);

/// True when the op must be recorded: a tape is present and some input
/// needs a gradient.
template <class T>
bool should_record(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace wmseg::nn
