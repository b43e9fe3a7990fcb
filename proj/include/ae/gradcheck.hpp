#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ae/tensor.hpp"

namespace ae {

// Numerical gradient checking. A case owns a scalar-producing function of a
// set of leaf tensors; check() runs the tape backward once, then perturbs
// every leaf element with central differences and compares.
struct GradCheckResult {
  std::string name;
  std::string input_shape;  // shape of the first leaf, 'x'-separated
  double rel_err = 0.0;
  bool pass = false;
};

// max |a-b| over max(1, max|a|, max|b|), the usual scale-aware metric.
double rel_error(const std::vector<double>& a, const std::vector<double>& b);

// Central difference d f / d leaf[i] with step h for every element of every
// leaf, evaluated by calling f() with the leaf data temporarily modified.
// Returns gradients concatenated in leaf order.
std::vector<double> finite_diff(const std::function<double()>& f,
                                const std::vector<Tensor>& leaves, double h = 1e-5);

struct GradCase {
  std::string name;
  std::vector<Tensor> leaves;             // perturbed + grad-checked
  std::function<Tensor()> forward;        // must produce a scalar from the leaves
  double tolerance = 1e-4;
  double step = 1e-5;
};

GradCheckResult run_grad_case(const GradCase& c);

}  // namespace ae
