#pragma once

#include <string>

#include "ae/module.hpp"
#include "ae/ops.hpp"
#include "ae/rng.hpp"
#include "ae/tensor.hpp"

namespace ae::nn {

// Layers own their tensors and register them into a ModuleGraph under a
// caller-chosen prefix. Construction takes the Rng so weight draws are fully
// reproducible from a seed.

struct Conv2d {
  Tensor weight;  // (out, in/groups, k, k)
  Tensor bias;    // (out) or undefined
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;

  Conv2d() = default;
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t padding,
         Rng& rng, bool with_bias = true, int64_t groups = 1);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct BatchNorm2d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);

  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct LayerNormChannel {
  Tensor gamma, beta;
  double eps = 1e-5;

  LayerNormChannel() = default;
  explicit LayerNormChannel(int64_t channels);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct Linear {
  Tensor weight;  // (in, out) so forward is x @ weight + bias
  Tensor bias;    // (out)

  Linear() = default;
  // init_scale overrides the default U(-1/sqrt(in), 1/sqrt(in)) draw with
  // N(0, init_scale); used for heads that should start near zero.
  Linear(int64_t in, int64_t out, Rng& rng, double init_scale = 0.0);

  Tensor forward(const Tensor& x) const;  // x: (..., in)
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

}  // namespace ae::nn
