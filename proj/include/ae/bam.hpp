#pragma once

#include <string>

#include "ae/attention.hpp"
#include "ae/layers.hpp"

namespace ae {

// Residual pair of attention-weighted convolutions. The main path is two
// RFCBAM blocks (the second keeps its BatchNorm but defers ReLU until after
// the residual add); the shortcut is a strided 1x1 projection.
struct BamStage {
  RFCBAMConv block1;    // carries the stage stride
  RFCBAMConv block2;    // stride 1
  nn::Conv2d shortcut;  // 1x1, stage stride, with bias

  BamStage() = default;
  BamStage(int64_t in_ch, int64_t out_ch, int64_t stride, int64_t reduction, bool use_spatial,
           Rng& rng);

  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct BamConfig {
  int64_t in_ch = 0;
  int64_t embed_dim = 256;
  int64_t reduction = 8;
  bool use_spatial = false;
};

// Background branch: two stride-2 stages take the early backbone map from
// in_ch channels to embed_dim at 1/4 the spatial extent, widening through
// 2*in_ch in between.
struct BackgroundAttentionModule {
  BamConfig cfg;
  BamStage stage1;  // in_ch -> 2*in_ch, stride 2
  BamStage stage2;  // 2*in_ch -> embed_dim, stride 2

  BackgroundAttentionModule() = default;
  BackgroundAttentionModule(const BamConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

}  // namespace ae
