#include "ae/layers.hpp"

#include <cmath>

namespace ae::nn {

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride_, int64_t padding_,
               Rng& rng, bool with_bias, int64_t groups_)
    : stride(stride_), padding(padding_), groups(groups_) {
  if (in_ch % groups != 0 || out_ch % groups != 0) {
    throw ValueError("conv channels must divide groups");
  }
  const int64_t fan_in = (in_ch / groups) * kernel * kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  weight = Tensor::rand_uniform({out_ch, in_ch / groups, kernel, kernel}, rng, -bound, bound);
  if (with_bias) bias = Tensor::zeros({out_ch});
}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, padding, groups);
}

void Conv2d::reg(ModuleGraph& g, const std::string& prefix) const {
  g.add_param(prefix + ".weight", weight);
  if (bias.defined()) g.add_param(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int64_t channels)
    : gamma(Tensor::full({channels}, 1.0)),
      beta(Tensor::zeros({channels})),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  return ops::batchnorm(x, gamma, beta, eps, train, running_mean, running_var, momentum);
}

void BatchNorm2d::reg(ModuleGraph& g, const std::string& prefix) const {
  g.add_param(prefix + ".gamma", gamma);
  g.add_param(prefix + ".beta", beta);
  g.add_buffer(prefix + ".running_mean", running_mean);
  g.add_buffer(prefix + ".running_var", running_var);
}

LayerNormChannel::LayerNormChannel(int64_t channels)
    : gamma(Tensor::full({channels}, 1.0)), beta(Tensor::zeros({channels})) {}

Tensor LayerNormChannel::forward(const Tensor& x) const {
  return ops::layernorm_channel(x, gamma, beta, eps);
}

void LayerNormChannel::reg(ModuleGraph& g, const std::string& prefix) const {
  g.add_param(prefix + ".gamma", gamma);
  g.add_param(prefix + ".beta", beta);
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, double init_scale) {
  if (init_scale > 0.0) {
    weight = Tensor::rand_normal({in, out}, rng);
    double* w = weight.mutable_data();
    for (int64_t i = 0; i < weight.numel(); ++i) w[i] *= init_scale;
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Tensor::rand_uniform({in, out}, rng, -bound, bound);
  }
  bias = Tensor::zeros({out});
}

Tensor Linear::forward(const Tensor& x) const {
  return ops::add(ops::matmul(x, weight), bias);
}

void Linear::reg(ModuleGraph& g, const std::string& prefix) const {
  g.add_param(prefix + ".weight", weight);
  g.add_param(prefix + ".bias", bias);
}

}  // namespace ae::nn
