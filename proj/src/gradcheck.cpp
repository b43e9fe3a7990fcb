#include "ae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ae {

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValueError("rel_error on vectors of different length");
  double max_diff = 0.0, max_mag = 1.0;
  for (size_t i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    max_mag = std::max({max_mag, std::abs(a[i]), std::abs(b[i])});
  }
  return max_diff / max_mag;
}

std::vector<double> finite_diff(const std::function<double()>& f,
                                const std::vector<Tensor>& leaves, double h) {
  std::vector<double> grads;
  for (const Tensor& leaf : leaves) {
    Tensor alias = leaf;  // handles share storage
    double* data = alias.mutable_data();
    const int64_t n = leaf.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f();
      data[i] = saved - h;
      const double fm = f();
      data[i] = saved;
      grads.push_back((fp - fm) / (2.0 * h));
    }
  }
  return grads;
}

GradCheckResult run_grad_case(const GradCase& c) {
  GradCheckResult r;
  r.name = c.name;
  r.input_shape = c.leaves.empty() ? "-" : shape_str(c.leaves.front().shape());

  for (const Tensor& leaf : c.leaves) Tensor(leaf).set_requires_grad(true);

  Tape tape;
  std::vector<double> analytic;
  {
    TapeScope scope(tape);
    Tensor loss = c.forward();
    tape.run_backward(loss);
    for (const Tensor& leaf : c.leaves) {
      const std::vector<double> g = leaf.grad_vector();
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
  }

  // Numeric pass runs with no tape active so forward work stays cheap.
  auto scalar_f = [&]() { return c.forward().at(0); };
  const std::vector<double> numeric = finite_diff(scalar_f, c.leaves, c.step);

  r.rel_err = rel_error(analytic, numeric);
  r.pass = r.rel_err < c.tolerance;
  return r;
}

}  // namespace ae
