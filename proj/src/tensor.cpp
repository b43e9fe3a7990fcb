#include "ae/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace ae {

int64_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("shape must have rank >= 1");
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 1) throw ShapeError("shape extents must be positive, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape, char sep) {
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << sep;
    os << shape[i];
  }
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

Tensor Tensor::rand_normal(const Shape& shape, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ValueError("tensor is undefined");
  return impl_->shape;
}

int64_t Tensor::extent(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(s.size()));
  }
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(shape().empty() ? 0 : impl_->data.size()); }

const double* Tensor::data() const {
  if (!impl_) throw ValueError("tensor is undefined");
  return impl_->data.data();
}

double* Tensor::mutable_data() {
  if (!impl_) throw ValueError("tensor is undefined");
  return impl_->data.data();
}

double Tensor::at(int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) {
    throw ValueError("flat index " + std::to_string(flat_index) + " out of range");
  }
  return impl_->data[static_cast<size_t>(flat_index)];
}

std::vector<double> Tensor::to_vector() const {
  if (!impl_) throw ValueError("tensor is undefined");
  return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw ValueError("tensor is undefined");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::grad_allocated() const { return impl_ && !impl_->grad.empty(); }

const double* Tensor::grad_data() const {
  if (!grad_allocated()) throw ValueError("tensor has no gradient");
  return impl_->grad.data();
}

std::vector<double> Tensor::grad_vector() const {
  if (!impl_) throw ValueError("tensor is undefined");
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  Tensor out(shape(), impl_->data);
  out.set_requires_grad(impl_->requires_grad);
  return out;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::current() { return g_active_tape; }

void Tape::track(const Tensor& t) {
  auto impl = t.impl();
  if (!impl) return;
  if (seen_.insert(impl.get()).second) tracked_.push_back(impl);
}

void Tape::record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
                  std::function<void()> backward_fn) {
  for (const Tensor& in : inputs) {
    if (in.defined() && in.requires_grad()) track(in);
  }
  track(output);
  nodes_.push_back(Node{op, std::move(backward_fn)});
}

bool Tape::tracks(const Tensor& t) const {
  return t.defined() && seen_.count(t.impl().get()) > 0;
}

void Tape::run_backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ValueError("backward root must be a defined scalar");
  }
  if (!tracks(root)) throw ValueError("backward root was not produced on this tape");
  for (auto& impl : tracked_) {
    impl->grad.assign(impl->data.size(), 0.0);
  }
  root.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& root, Tape& tape) { tape.run_backward(root); }

}  // namespace ae
