#pragma once

#include <functional>
#include <vector>

#include "wmseg/tensor.hpp"

namespace wmseg::nn {

template <class T>
using ScalarFn = std::function<Tensor<T>(Tape<T>*, const Tensor<T>&)>;

template <class T>
using ClosedScalarFn = std::function<Tensor<T>(Tape<T>*)>;

/// Compares the taped gradient of f at x with central differences of step h.
/// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|). Throws
/// ContractError when f is not scalar or not repeatable.
template <class T>
double grad_check(const ScalarFn<T>& f, Tensor<T> x, double h);

/// Same check over several leaf tensors that f reads implicitly (for
/// example, the parameters of a model). The values of every tensor are
/// perturbed in place and restored afterwards.
template <class T>
double grad_check(const ClosedScalarFn<T>& f, std::vector<Tensor<T>> leaves, double h);

extern template double grad_check<double>(const ScalarFn<double>&, Tensor<double>, double);
extern template double grad_check<float>(const ScalarFn<float>&, Tensor<float>, double);
extern template double grad_check<double>(const ClosedScalarFn<double>&, std::vector<Tensor<double>>, double);
extern template double grad_check<float>(const ClosedScalarFn<float>&, std::vector<Tensor<float>>, double);

}  // namespace wmseg::nn
