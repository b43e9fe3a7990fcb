#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "ae/rng.hpp"

namespace ae {

using Shape = std::vector<int64_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ValueError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

// Product of extents; throws on empty shapes or non-positive extents.
int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape, char sep = 'x');

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily by the backward pass
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float64 tensor. Handles share storage; values are treated
// as immutable after construction except through mutable_data(), which exists
// for in-place parameter updates and weight loading.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);  // shape {1}
  static Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi);
  static Tensor rand_normal(const Shape& shape, Rng& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t extent(int axis) const;
  int64_t numel() const;

  const double* data() const;
  double* mutable_data();
  double at(int64_t flat_index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  // Gradient access after a backward pass. grad_vector() returns zeros when
  // no gradient has been recorded for this tensor.
  bool grad_allocated() const;
  const double* grad_data() const;
  std::vector<double> grad_vector() const;

  // Deep copy of shape/data/requires_grad; gradient state is not copied.
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Operations record one node per call when gradients are
// being traced; run_backward replays the nodes in reverse. A tape is confined
// to one execution context and is not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
              std::function<void()> backward_fn);

  size_t node_count() const { return nodes_.size(); }
  bool tracks(const Tensor& t) const;

  // Seeds root with gradient 1 and sweeps the tape once in reverse order.
  // Every tracked tensor with requires_grad receives d(root)/d(tensor);
  // tracked leaves that do not reach the root end up with zeros.
  void run_backward(const Tensor& root);

 private:
  friend class TapeScope;
  struct Node {
    const char* op;
    std::function<void()> backward;
  };
  void track(const Tensor& t);
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<detail::TensorImpl>> tracked_;
  std::unordered_set<const detail::TensorImpl*> seen_;
};

// RAII guard installing a tape as the active recording target.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

void backward(const Tensor& root, Tape& tape);

}  // namespace ae
