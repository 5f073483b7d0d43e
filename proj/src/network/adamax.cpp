#include "wmseg/adamax.hpp"

#include <algorithm>
#include <cmath>

#include "wmseg/error.hpp"

namespace wmseg::nn {

void AdamaxConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
}

template <class T>
Adamax<T>::Adamax(std::vector<Tensor<T>> params, AdamaxConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), T(0));
    u_.emplace_back(static_cast<size_t>(p.numel()), T(0));
  }
}

template <class T>
void Adamax<T>::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw ContractError("adamax: parameter without gradient");
  }
  ++t_;
  const double step_size = cfg_.lr / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T eps = static_cast<T>(cfg_.epsilon);
  const T lr_t = static_cast<T>(step_size);
  for (size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i].values();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    auto& u = u_[i];
    for (size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      u[j] = std::max(b2 * u[j], std::abs(g[j]));
      const T denom = u[j] + eps;
      if (denom > T(0)) theta[j] -= lr_t * m[j] / denom;
    }
  }
}

template class Adamax<float>;
template class Adamax<double>;

}  // namespace wmseg::nn
