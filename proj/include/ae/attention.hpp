#pragma once

#include <string>

#include "ae/layers.hpp"
#include "ae/module.hpp"
#include "ae/tensor.hpp"

namespace ae {

// Squeeze-style channel gate: global average and max descriptors run through
// a shared two-layer MLP, summed, squashed to (0,1). Output is (N,C,1,1).
struct ChannelAttention {
  nn::Linear fc1, fc2;

  ChannelAttention() = default;
  ChannelAttention(int64_t channels, int64_t reduction, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

// Spatial gate: per-position mean and max over channels, a 7x7 conv mixes
// them into a single-plane mask in (0,1). Output is (N,1,H,W).
struct SpatialAttention {
  nn::Conv2d conv;

  SpatialAttention() = default;
  explicit SpatialAttention(Rng& rng);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct RfcbamConfig {
  int64_t in_ch = 0;
  int64_t out_ch = 0;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t reduction = 8;
  bool use_spatial = false;
};

// Convolution whose k*k taps are reweighted per output position before
// aggregation. The unfolded neighborhood (N, C, k*k, L) is scaled by a
// per-position softmax over the k*k slots (receptive-field weights) and by a
// per-channel gate, then a 1x1 convolution over the C*k*k rows plays the
// role of the kernel. BatchNorm and ReLU finish the block.
//
// The slot-weight generator starts at zero so the initial weighting is the
// uniform 1/k*k, i.e. the block begins life as a plain (scaled) convolution.
struct RFCBAMConv {
  RfcbamConfig cfg;
  nn::Conv2d rf_gen;      // grouped 1x1 over the slot-major unfolded map
  ChannelAttention ca;
  nn::Conv2d agg_conv;    // 1x1 over the channel-major weighted map, no bias
  SpatialAttention sa;    // only used when cfg.use_spatial
  nn::BatchNorm2d bn;

  RFCBAMConv() = default;
  RFCBAMConv(const RfcbamConfig& cfg, Rng& rng);

  // Per-position softmax over the k*k slots, shape (N, k*k, H', W').
  Tensor rf_weights(const Tensor& x) const;
  // Channel gate from the raw input, shape (N, C, 1, 1).
  Tensor channel_scale(const Tensor& x) const;
  // Weighted aggregation given precomputed gates; the seam tests use it to
  // substitute neutral gates.
  Tensor aggregate(const Tensor& x, const Tensor& rfw, const Tensor& cs) const;

  Tensor forward_prenorm(const Tensor& x) const;
  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

}  // namespace ae
