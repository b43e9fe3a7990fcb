#include "ae/pipeline.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ae/ops.hpp"

namespace ae {

Preset parse_preset(const std::string& name) {
  if (name == "toy") return Preset::toy;
  if (name == "r34-shape") return Preset::r34_shape;
  if (name == "r50-shape") return Preset::r50_shape;
  throw ParseError("unknown preset '" + name + "' (expected toy, r34-shape, r50-shape)");
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::toy: return "toy";
    case Preset::r34_shape: return "r34-shape";
    case Preset::r50_shape: return "r50-shape";
  }
  return "?";
}

BasicBlock::BasicBlock(int64_t in, int64_t out, int64_t stride, Rng& rng)
    : conv1(in, out, 3, stride, 1, rng, false),
      conv2(out, out, 3, 1, 1, rng, false),
      bn1(out),
      bn2(out),
      has_ds(stride != 1 || in != out) {
  if (has_ds) {
    ds_conv = nn::Conv2d(in, out, 1, stride, 0, rng, false);
    ds_bn = nn::BatchNorm2d(out);
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor h = ops::relu(bn1.forward(conv1.forward(x), train));
  h = bn2.forward(conv2.forward(h), train);
  Tensor s = has_ds ? ds_bn.forward(ds_conv.forward(x), train) : x;
  return ops::relu(ops::add(h, s));
}

void BasicBlock::reg(ModuleGraph& g, const std::string& prefix) const {
  conv1.reg(g, prefix + ".conv1");
  bn1.reg(g, prefix + ".bn1");
  conv2.reg(g, prefix + ".conv2");
  bn2.reg(g, prefix + ".bn2");
  if (has_ds) {
    ds_conv.reg(g, prefix + ".ds_conv");
    ds_bn.reg(g, prefix + ".ds_bn");
  }
}

Bottleneck::Bottleneck(int64_t in, int64_t mid, int64_t stride, Rng& rng)
    : conv1(in, mid, 1, 1, 0, rng, false),
      conv2(mid, mid, 3, stride, 1, rng, false),
      conv3(mid, mid * 4, 1, 1, 0, rng, false),
      bn1(mid),
      bn2(mid),
      bn3(mid * 4),
      has_ds(stride != 1 || in != mid * 4) {
  if (has_ds) {
    ds_conv = nn::Conv2d(in, mid * 4, 1, stride, 0, rng, false);
    ds_bn = nn::BatchNorm2d(mid * 4);
  }
}

Tensor Bottleneck::forward(const Tensor& x, bool train) {
  Tensor h = ops::relu(bn1.forward(conv1.forward(x), train));
  h = ops::relu(bn2.forward(conv2.forward(h), train));
  h = bn3.forward(conv3.forward(h), train);
  Tensor s = has_ds ? ds_bn.forward(ds_conv.forward(x), train) : x;
  return ops::relu(ops::add(h, s));
}

void Bottleneck::reg(ModuleGraph& g, const std::string& prefix) const {
  conv1.reg(g, prefix + ".conv1");
  bn1.reg(g, prefix + ".bn1");
  conv2.reg(g, prefix + ".conv2");
  bn2.reg(g, prefix + ".bn2");
  conv3.reg(g, prefix + ".conv3");
  bn3.reg(g, prefix + ".bn3");
  if (has_ds) {
    ds_conv.reg(g, prefix + ".ds_conv");
    ds_bn.reg(g, prefix + ".ds_bn");
  }
}

Tensor Backbone::Stage::forward(const Tensor& x, bool train) {
  Tensor h = x;
  for (auto& b : basic) h = b.forward(h, train);
  for (auto& b : bottleneck) h = b.forward(h, train);
  return h;
}

void Backbone::Stage::reg(ModuleGraph& g, const std::string& prefix) const {
  for (size_t i = 0; i < basic.size(); ++i) {
    basic[i].reg(g, prefix + ".block" + std::to_string(i + 1));
  }
  for (size_t i = 0; i < bottleneck.size(); ++i) {
    bottleneck[i].reg(g, prefix + ".block" + std::to_string(i + 1));
  }
}

Backbone::Backbone(Preset preset, Rng& rng) {
  const bool tiny = preset == Preset::toy;
  const bool bneck = preset == Preset::r50_shape;
  const int64_t stem_ch = tiny ? 16 : 64;
  stem_conv_ = tiny ? nn::Conv2d(3, 16, 3, 2, 1, rng, false)
                    : nn::Conv2d(3, 64, 7, 2, 3, rng, false);
  stem_bn_ = nn::BatchNorm2d(stem_ch);
  pool_window_ = tiny ? 2 : 3;
  pool_stride_ = 2;
  pool_padding_ = tiny ? 0 : 1;

  const std::array<int64_t, 4> counts = tiny ? std::array<int64_t, 4>{1, 1, 1, 1}
                                             : std::array<int64_t, 4>{3, 4, 6, 3};
  const std::array<int64_t, 4> widths = tiny ? std::array<int64_t, 4>{16, 32, 64, 128}
                                             : std::array<int64_t, 4>{64, 128, 256, 512};
  int64_t in = stem_ch;
  for (size_t s = 0; s < 4; ++s) {
    const int64_t stage_stride = s == 0 ? 1 : 2;
    for (int64_t b = 0; b < counts[s]; ++b) {
      const int64_t stride = b == 0 ? stage_stride : 1;
      if (bneck) {
        stages_[s].bottleneck.emplace_back(in, widths[s], stride, rng);
        in = widths[s] * 4;
      } else {
        stages_[s].basic.emplace_back(in, widths[s], stride, rng);
        in = widths[s];
      }
    }
  }
  const int64_t mult = bneck ? 4 : 1;
  tap_ch_ = {widths[1] * mult, widths[2] * mult, widths[3] * mult};
}

Tensor Backbone::forward_stem(const Tensor& x, bool train) {
  Tensor h = ops::relu(stem_bn_.forward(stem_conv_.forward(x), train));
  return ops::pool(ops::PoolKind::max, h, pool_window_, pool_stride_, pool_padding_);
}

Tensor Backbone::forward_to_s1(const Tensor& x, bool train) {
  Tensor h = forward_stem(x, train);
  h = stages_[0].forward(h, train);
  return stages_[1].forward(h, train);
}

BackboneTaps Backbone::forward(const Tensor& x, bool train) {
  BackboneTaps taps;
  taps.s1 = forward_to_s1(x, train);
  taps.s2 = stages_[2].forward(taps.s1, train);
  taps.s3 = stages_[3].forward(taps.s2, train);
  return taps;
}

void Backbone::reg_to_s1(ModuleGraph& g, const std::string& prefix) const {
  stem_conv_.reg(g, prefix + ".stem.conv");
  stem_bn_.reg(g, prefix + ".stem.bn");
  stages_[0].reg(g, prefix + ".stage1");
  stages_[1].reg(g, prefix + ".stage2");
}

void Backbone::reg(ModuleGraph& g, const std::string& prefix) const {
  reg_to_s1(g, prefix);
  stages_[2].reg(g, prefix + ".stage3");
  stages_[3].reg(g, prefix + ".stage4");
}

namespace {

Tensor to_tokens(const Tensor& x) {
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  return ops::reshape(ops::transpose(x, {0, 2, 3, 1}), {n, h * w, c});
}

Tensor to_map(const Tensor& tokens, int64_t n, int64_t c, int64_t h, int64_t w) {
  return ops::transpose(ops::reshape(tokens, {n, h, w, c}), {0, 3, 1, 2});
}

}  // namespace

HybridEncoder::HybridEncoder(int64_t c1, int64_t c2, int64_t c3, int64_t dim_, int64_t heads_,
                             Rng& rng)
    : dim(dim_),
      heads(heads_),
      proj1(c1, dim_, 1, 1, 0, rng),
      proj2(c2, dim_, 1, 1, 0, rng),
      proj3(c3, dim_, 1, 1, 0, rng),
      ln1(dim_),
      mha(dim_, rng) {
  if (dim % heads != 0) throw ValueError("encoder dim must split evenly across heads");
}

EncoderOut HybridEncoder::forward(const BackboneTaps& taps) const {
  EncoderOut out;
  out.f1 = proj1.forward(taps.s1);
  out.f2 = proj2.forward(taps.s2);
  Tensor p3 = proj3.forward(taps.s3);
  const int64_t n = p3.extent(0), h = p3.extent(2), w = p3.extent(3);
  Tensor att = mha_forward(to_tokens(ln1.forward(p3)), mha, heads, nullptr);
  out.f3 = ops::add(p3, to_map(att, n, dim, h, w));
  return out;
}

void HybridEncoder::reg(ModuleGraph& g, const std::string& prefix) const {
  proj1.reg(g, prefix + ".proj1");
  proj2.reg(g, prefix + ".proj2");
  proj3.reg(g, prefix + ".proj3");
  ln1.reg(g, prefix + ".ln1");
  mha.reg(g, prefix + ".mha");
}

QuerySelector::QuerySelector(int64_t dim, Rng& rng) : score(dim, 1, 1, 1, 0, rng) {}

QuerySelection QuerySelector::select(const std::vector<Tensor>& maps, int64_t k) const {
  if (maps.empty()) throw ValueError("query selection needs at least one map");
  int64_t total = 0;
  const int64_t c = maps[0].extent(1);
  for (const Tensor& m : maps) {
    if (m.rank() != 4 || m.extent(0) != 1) {
      throw ShapeError("query selection expects batch-1 NCHW maps");
    }
    if (m.extent(1) != c) throw ShapeError("query selection maps must share channel count");
    total += m.extent(2) * m.extent(3);
  }
  if (k < 1 || k > total) {
    throw ValueError("query count must be in [1, " + std::to_string(total) + "]");
  }

  std::vector<double> all_scores(static_cast<size_t>(total));
  int64_t off = 0;
  for (const Tensor& m : maps) {
    Tensor s = score.forward(m);  // (1, 1, H, W)
    const double* sp = s.data();
    const int64_t hw = s.extent(2) * s.extent(3);
    std::copy(sp, sp + hw, all_scores.begin() + off);
    off += hw;
  }

  std::vector<int64_t> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int64_t a, int64_t b) {
                      const double sa = all_scores[static_cast<size_t>(a)];
                      const double sb = all_scores[static_cast<size_t>(b)];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });

  QuerySelection sel;
  sel.embeddings = Tensor::zeros({k, c});
  double* fp = sel.embeddings.mutable_data();
  for (int64_t qi = 0; qi < k; ++qi) {
    const int64_t flat = order[static_cast<size_t>(qi)];
    sel.scores.push_back(all_scores[static_cast<size_t>(flat)]);
    int64_t rem = flat;
    for (size_t mi = 0; mi < maps.size(); ++mi) {
      const Tensor& m = maps[mi];
      const int64_t w = m.extent(3);
      const int64_t hw = m.extent(2) * w;
      if (rem < hw) {
        sel.indices.push_back({static_cast<int64_t>(mi), rem / w, rem % w});
        const double* mp = m.data();
        for (int64_t ci = 0; ci < c; ++ci) fp[qi * c + ci] = mp[ci * hw + rem];
        break;
      }
      rem -= hw;
    }
  }
  return sel;
}

void QuerySelector::reg(ModuleGraph& g, const std::string& prefix) const {
  score.reg(g, prefix + ".score");
}

std::string selection_csv(const QuerySelection& sel) {
  std::ostringstream out;
  out << "rank,scale,y,x,score\n";
  out << std::setprecision(17);
  for (size_t i = 0; i < sel.indices.size(); ++i) {
    const QueryIndex& qi = sel.indices[i];
    out << i << ',' << qi.scale << ',' << qi.y << ',' << qi.x << ',' << sel.scores[i] << '\n';
  }
  return out.str();
}

AssociationPipeline::AssociationPipeline(const PipelineConfig& cfg) : cfg_(cfg) {
  Rng rng_main(cfg.seed);
  backbone = Backbone(cfg.preset, rng_main);
  encoder = HybridEncoder(backbone.s1_channels(), backbone.s2_channels(),
                          backbone.s3_channels(), cfg.dim, cfg.encoder_heads, rng_main);
  qsel = QuerySelector(cfg.dim, rng_main);
  if (cfg.use_ae) {
    // Separate stream: the branch can be added or removed without changing
    // a single draw consumed by the shared components above.
    Rng rng_ae(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    bam = BackgroundAttentionModule(
        {backbone.s1_channels(), cfg.dim, cfg.reduction, cfg.use_spatial}, rng_ae);
    am = AssociationModule({cfg.dim, cfg.am_heads, cfg.window, cfg.am_ffn}, rng_ae);
  }
}

PipelineOut AssociationPipeline::forward(const Tensor& image, bool train) {
  PipelineOut out;
  auto note = [&](const std::string& name, const Tensor& t) {
    out.trace.push_back({name, t.shape()});
  };
  note("image", image);
  out.taps = backbone.forward(image, train);
  note("S1", out.taps.s1);
  note("S2", out.taps.s2);
  note("S3", out.taps.s3);
  EncoderOut enc = encoder.forward(out.taps);
  out.f1 = enc.f1;
  out.f2 = enc.f2;
  out.f3 = enc.f3;
  note("F1", out.f1);
  note("F2", out.f2);
  note("F3", out.f3);
  if (cfg_.use_ae) {
    out.fb = bam.forward(out.taps.s1, train);
    note("F_b", out.fb);
    out.fa = am.forward(out.fb);
    note("F_a", out.fa);
    out.fused = fuse_association(out.fa, out.fb);
    note("F_a+F_b", out.fused);
    out.f3_hat = ops::add(out.f3, out.fb);
  } else {
    out.f3_hat = out.f3;
  }
  note("F3_hat", out.f3_hat);

  int64_t total = 0;
  for (const Tensor* m : {&out.f1, &out.f2, &out.f3_hat}) {
    total += m->extent(2) * m->extent(3);
  }
  const int64_t k = std::min<int64_t>(cfg_.queries, total);
  out.sel = qsel.select({out.f1, out.f2, out.f3_hat}, k);
  out.trace.push_back({"queries", {k, cfg_.dim}});
  return out;
}

ModuleGraph AssociationPipeline::graph() const {
  ModuleGraph g;
  backbone.reg(g, "backbone");
  encoder.reg(g, "encoder");
  qsel.reg(g, "qsel");
  if (cfg_.use_ae) {
    bam.reg(g, "bam");
    am.reg(g, "am");
  }
  return g;
}

namespace {

void zero_tensor(const Tensor& t) {
  if (!t.defined()) return;
  Tensor alias = t;  // handles share storage
  std::fill_n(alias.mutable_data(), alias.numel(), 0.0);
}

}  // namespace

void AssociationPipeline::zero_ae_branch_outputs() {
  if (!cfg_.use_ae) return;
  // Background branch: kill both summands of the final residual stage.
  zero_tensor(bam.stage2.block2.bn.gamma);
  zero_tensor(bam.stage2.block2.bn.beta);
  zero_tensor(bam.stage2.shortcut.weight);
  zero_tensor(bam.stage2.shortcut.bias);
  // Association module: kill the attention output projection and the FFN
  // projection, leaving both residual adds as identities.
  zero_tensor(am.mha.wo.weight);
  zero_tensor(am.mha.wo.bias);
  zero_tensor(am.ffn.project.weight);
  zero_tensor(am.ffn.project.bias);
}

Tensor BamClassifier::forward(const Tensor& x, bool train) {
  Tensor s1 = model->backbone.forward_to_s1(x, train);
  Tensor f = model->bam.forward(s1, train);
  const int64_t n = f.extent(0), c = f.extent(1);
  Tensor pooled = ops::reshape(ops::global_pool(ops::PoolKind::avg, f), {n, c});
  return head.forward(pooled);
}

ModuleGraph BamClassifier::graph() const {
  ModuleGraph g;
  model->backbone.reg_to_s1(g, "backbone");
  model->bam.reg(g, "bam");
  head.reg(g, "head");
  return g;
}

BamClassifier attach_head(AssociationPipeline& model, int64_t num_classes, Rng& rng) {
  if (!model.config().use_ae) {
    throw ValueError("pretraining needs the association branch enabled");
  }
  BamClassifier clf;
  clf.model = &model;
  clf.num_classes = num_classes;
  // Small head init keeps initial logits near zero, so the starting loss
  // sits at ln(num_classes).
  clf.head = nn::Linear(model.config().dim, num_classes, rng, 0.001);
  return clf;
}

AssociationPipeline& strip_head(BamClassifier& clf) {
  if (!clf.model) throw ValueError("classifier has no underlying model");
  return *clf.model;
}

}  // namespace ae
