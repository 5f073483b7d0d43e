#include "wmseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "wmseg/error.hpp"

namespace wmseg::nn {

template <class T>
double grad_check(const ClosedScalarFn<T>& f, std::vector<Tensor<T>> leaves, double h) {
  if (!(h > 0.0)) throw ParameterError("grad_check step must be positive");
  std::vector<bool> previous(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) {
    previous[i] = leaves[i].requires_grad();
    leaves[i].set_requires_grad(true);
    leaves[i].zero_grad();
  }

  Tape<T> tape;
  const Tensor<T> y = f(&tape);
  if (!y.defined() || y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  backward(y, tape);
  tape.clear();

  const T y0 = y.item();
  const T y_again = f(nullptr).item();
  if (std::memcmp(&y0, &y_again, sizeof(T)) != 0) {
    throw ContractError("grad_check: f is not deterministic");
  }

  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<T> analytic(static_cast<size_t>(leaf.numel()), T(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto v = leaf.values();
    for (size_t i = 0; i < v.size(); ++i) {
      const T orig = v[i];
      v[i] = static_cast<T>(orig + h);
      const double fp = f(nullptr).item();
      v[i] = static_cast<T>(orig - h);
      const double fm = f(nullptr).item();
      v[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  for (size_t i = 0; i < leaves.size(); ++i) {
    leaves[i].zero_grad();
    leaves[i].set_requires_grad(previous[i]);
  }
  return worst;
}

template <class T>
double grad_check(const ScalarFn<T>& f, Tensor<T> x, double h) {
  return grad_check<T>(ClosedScalarFn<T>([&f, x](Tape<T>* tape) { return f(tape, x); }), std::vector<Tensor<T>>{x}, h);
}

template double grad_check<double>(const ScalarFn<double>&, Tensor<double>, double);
template double grad_check<float>(const ScalarFn<float>&, Tensor<float>, double);
template double grad_check<double>(const ClosedScalarFn<double>&, std::vector<Tensor<double>>, double);
template double grad_check<float>(const ClosedScalarFn<float>&, std::vector<Tensor<float>>, double);

}  // namespace wmseg::nn
