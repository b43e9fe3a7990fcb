#include "ae/bam.hpp"

#include "ae/ops.hpp"

namespace ae {

BamStage::BamStage(int64_t in_ch, int64_t out_ch, int64_t stride, int64_t reduction,
                   bool use_spatial, Rng& rng)
    : block1({in_ch, out_ch, 3, stride, reduction, use_spatial}, rng),
      block2({out_ch, out_ch, 3, 1, reduction, use_spatial}, rng),
      shortcut(in_ch, out_ch, 1, stride, 0, rng) {}

Tensor BamStage::forward(const Tensor& x, bool train) {
  Tensor h = block1.forward(x, train);
  Tensor main = block2.bn.forward(block2.forward_prenorm(h), train);
  return ops::relu(ops::add(main, shortcut.forward(x)));
}

void BamStage::reg(ModuleGraph& g, const std::string& prefix) const {
  block1.reg(g, prefix + ".block1");
  block2.reg(g, prefix + ".block2");
  shortcut.reg(g, prefix + ".shortcut");
}

BackgroundAttentionModule::BackgroundAttentionModule(const BamConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      stage1(cfg_.in_ch, 2 * cfg_.in_ch, 2, cfg_.reduction, cfg_.use_spatial, rng),
      stage2(2 * cfg_.in_ch, cfg_.embed_dim, 2, cfg_.reduction, cfg_.use_spatial, rng) {
  if (cfg.in_ch < 1 || cfg.embed_dim < 1) throw ValueError("bam needs positive channel counts");
}

Tensor BackgroundAttentionModule::forward(const Tensor& x, bool train) {
  return stage2.forward(stage1.forward(x, train), train);
}

void BackgroundAttentionModule::reg(ModuleGraph& g, const std::string& prefix) const {
  stage1.reg(g, prefix + ".stage1");
  stage2.reg(g, prefix + ".stage2");
}

}  // namespace ae
