#include "ae/attention.hpp"

#include <algorithm>

#include "ae/ops.hpp"

namespace ae {

ChannelAttention::ChannelAttention(int64_t channels, int64_t reduction, Rng& rng) {
  if (channels < 1 || reduction < 1) throw ValueError("channel attention needs positive sizes");
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  fc1 = nn::Linear(channels, hidden, rng);
  fc2 = nn::Linear(hidden, channels, rng);
}

Tensor ChannelAttention::forward(const Tensor& x) const {
  const int64_t n = x.extent(0), c = x.extent(1);
  auto branch = [&](ops::PoolKind kind) {
    Tensor pooled = ops::reshape(ops::global_pool(kind, x), {n, c});
    return fc2.forward(ops::relu(fc1.forward(pooled)));
  };
  Tensor gate = ops::sigmoid(ops::add(branch(ops::PoolKind::avg), branch(ops::PoolKind::max)));
  return ops::reshape(gate, {n, c, 1, 1});
}

void ChannelAttention::reg(ModuleGraph& g, const std::string& prefix) const {
  fc1.reg(g, prefix + ".fc1");
  fc2.reg(g, prefix + ".fc2");
}

SpatialAttention::SpatialAttention(Rng& rng) : conv(2, 1, 7, 1, 3, rng) {}

Tensor SpatialAttention::forward(const Tensor& x) const {
  Tensor stats = ops::concat(ops::channel_reduce(ops::ReduceKind::mean, x),
                             ops::channel_reduce(ops::ReduceKind::max, x), 1);
  return ops::sigmoid(conv.forward(stats));
}

void SpatialAttention::reg(ModuleGraph& g, const std::string& prefix) const {
  conv.reg(g, prefix + ".conv");
}

RFCBAMConv::RFCBAMConv(const RfcbamConfig& cfg_, Rng& rng) : cfg(cfg_) {
  if (cfg.in_ch < 1 || cfg.out_ch < 1) throw ValueError("rfcbam needs positive channel counts");
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0) throw ValueError("rfcbam kernel must be odd");
  if (cfg.stride < 1) throw ValueError("rfcbam stride must be >= 1");
  const int64_t kk = cfg.kernel * cfg.kernel;
  rf_gen = nn::Conv2d(kk * cfg.in_ch, kk, 1, 1, 0, rng, true, kk);
  std::fill_n(rf_gen.weight.mutable_data(), rf_gen.weight.numel(), 0.0);
  ca = ChannelAttention(cfg.in_ch, cfg.reduction, rng);
  agg_conv = nn::Conv2d(kk * cfg.in_ch, cfg.out_ch, 1, 1, 0, rng, false);
  if (cfg.use_spatial) sa = SpatialAttention(rng);
  bn = nn::BatchNorm2d(cfg.out_ch);
}

namespace {

// Output spatial extent of the k x k unfold with same-style padding.
int64_t out_extent(int64_t in, int64_t k, int64_t stride) {
  return (in + 2 * (k / 2) - k) / stride + 1;
}

}  // namespace

Tensor RFCBAMConv::rf_weights(const Tensor& x) const {
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t ho = out_extent(x.extent(2), cfg.kernel, cfg.stride);
  const int64_t wo = out_extent(x.extent(3), cfg.kernel, cfg.stride);
  const int64_t kk = cfg.kernel * cfg.kernel;
  Tensor u = ops::unfold(x, cfg.kernel, cfg.stride, cfg.kernel / 2);
  // Regroup channel-major rows (c*kk + slot) into slot-major (slot*C + c) so
  // each conv group sees one slot across all channels.
  Tensor slot_major = ops::transpose(ops::reshape(u, {n, c, kk, ho * wo}), {0, 2, 1, 3});
  Tensor logits = rf_gen.forward(ops::reshape(slot_major, {n, kk * c, ho, wo}));
  return ops::softmax(logits, 1);
}

Tensor RFCBAMConv::channel_scale(const Tensor& x) const {
  return ca.forward(x);
}

Tensor RFCBAMConv::aggregate(const Tensor& x, const Tensor& rfw, const Tensor& cs) const {
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t ho = rfw.extent(2), wo = rfw.extent(3);
  const int64_t kk = cfg.kernel * cfg.kernel;
  Tensor u4 = ops::reshape(ops::unfold(x, cfg.kernel, cfg.stride, cfg.kernel / 2),
                           {n, c, kk, ho * wo});
  Tensor slots = ops::reshape(rfw, {n, 1, kk, ho * wo});
  Tensor weighted = ops::mul(ops::mul(u4, slots), cs);
  return agg_conv.forward(ops::reshape(weighted, {n, c * kk, ho, wo}));
}

Tensor RFCBAMConv::forward_prenorm(const Tensor& x) const {
  Tensor out = aggregate(x, rf_weights(x), channel_scale(x));
  if (cfg.use_spatial) out = ops::mul(out, sa.forward(out));
  return out;
}

Tensor RFCBAMConv::forward(const Tensor& x, bool train) {
  return ops::relu(bn.forward(forward_prenorm(x), train));
}

void RFCBAMConv::reg(ModuleGraph& g, const std::string& prefix) const {
  rf_gen.reg(g, prefix + ".rf_gen");
  ca.reg(g, prefix + ".ca");
  agg_conv.reg(g, prefix + ".agg");
  if (cfg.use_spatial) sa.reg(g, prefix + ".sa");
  bn.reg(g, prefix + ".bn");
}

}  // namespace ae
