#pragma once

#include <cstdint>
#include <vector>

#include "wmseg/tensor.hpp"

namespace wmseg::nn {

struct AdamaxConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Added to the infinity norm. Zero reproduces the original algorithm,
  // where a coordinate with u == 0 (never seen a gradient) is left alone.
  double epsilon = 0.0;

  void validate() const;
};

/// Adamax with per-parameter first moment m and infinity-norm moment u.
template <class T>
class Adamax {
 public:
  Adamax(std::vector<Tensor<T>> params, AdamaxConfig cfg = {});

  /// t <- t+1; m <- b1 m + (1-b1) g; u <- max(b2 u, |g|);
  /// theta <- theta - lr/(1-b1^t) * m/(u+eps). Throws ContractError when a
  /// parameter has no gradient.
  void step();

  int64_t t() const { return t_; }
  const AdamaxConfig& config() const { return cfg_; }
  const std::vector<std::vector<T>>& m() const { return m_; }
  const std::vector<std::vector<T>>& u() const { return u_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamaxConfig cfg_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> u_;
  int64_t t_ = 0;
};

extern template class Adamax<float>;
extern template class Adamax<double>;

}  // namespace wmseg::nn
