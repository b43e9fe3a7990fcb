#include "ae/gradsuite.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

#include "ae/am.hpp"
#include "ae/attention.hpp"
#include "ae/bam.hpp"
#include "ae/ops.hpp"
#include "ae/pipeline.hpp"
#include "ae/rng.hpp"

namespace ae {

namespace {

Tensor rand_t(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinked ops like relu: finite differences
// would straddle the kink if any |x| fell under the step size.
Tensor rand_signed(const Shape& shape, Rng& rng, double margin = 0.05) {
  Tensor t = Tensor::zeros(shape);
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = margin + rng.uniform() * (1.0 - margin);
    d[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Pairwise-distinct values (gap ~0.04 after jitter), for max-style ops whose
// derivative flips when two candidates swap order within a step.
Tensor rand_distinct(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  std::vector<int64_t> order(static_cast<size_t>(t.numel()));
  std::iota(order.begin(), order.end(), int64_t{0});
  rng.shuffle(order);
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    d[i] = 0.05 * static_cast<double>(order[static_cast<size_t>(i)]) + rng.uniform(-0.005, 0.005);
  }
  return t;
}

// Fixed random positive weights; summing y against them gives a scalar whose
// gradient exercises every element with a distinct coefficient, unlike a
// plain sum, which is blind to transposition errors.
Tensor probe_like(const Tensor& y, Rng& rng) { return rand_t(y.shape(), rng, 0.5, 1.5); }

Tensor ws(const Tensor& y, const Tensor& probe) { return ops::sum_all(ops::mul(y, probe)); }

void fill_rand(Tensor t, Rng& rng, double lo, double hi) {
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(lo, hi);
}

}  // namespace

std::vector<GradCase> ops_cases(uint64_t seed) {
  std::vector<GradCase> cases;
  // One generator per case keeps every case's data independent of the list
  // order, so adding a case never reshuffles the others.
  uint64_t salt = 0;
  auto fresh = [&]() { return Rng(seed * 1000003ULL + salt++); };

  {
    Rng r = fresh();
    Tensor a = rand_t({2, 3, 4}, r), b = rand_t({3, 1}, r);
    Tensor p = rand_t({2, 3, 4}, r, 0.5, 1.5);
    cases.push_back({"add-broadcast", {a, b}, [=]() { return ws(ops::add(a, b), p); }});
  }
  {
    Rng r = fresh();
    Tensor a = rand_t({2, 3, 4}, r), b = rand_t({1, 4}, r);
    Tensor p = rand_t({2, 3, 4}, r, 0.5, 1.5);
    cases.push_back({"mul-broadcast", {a, b}, [=]() { return ws(ops::mul(a, b), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_signed({3, 5}, r);
    Tensor p = probe_like(x, r);
    cases.push_back({"relu", {x}, [=]() { return ws(ops::relu(x), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({4, 3}, r, -2.0, 2.0);
    Tensor p = probe_like(x, r);
    cases.push_back({"sigmoid", {x}, [=]() { return ws(ops::sigmoid(x), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 7}, r, -2.0, 2.0);
    Tensor p = probe_like(x, r);
    cases.push_back({"gelu", {x}, [=]() { return ws(ops::gelu(x), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({3, 4}, r);
    Tensor p = probe_like(x, r);
    cases.push_back({"scale", {x}, [=]() { return ws(ops::scale(x, -1.7), p); }});
  }
  {
    Rng r = fresh();
    Tensor a = rand_t({3, 4}, r), b = rand_t({4, 5}, r);
    Tensor p = rand_t({3, 5}, r, 0.5, 1.5);
    cases.push_back({"matmul", {a, b}, [=]() { return ws(ops::matmul(a, b), p); }});
  }
  {
    Rng r = fresh();
    Tensor a = rand_t({2, 3, 4}, r), b = rand_t({4, 5}, r);
    Tensor p = rand_t({2, 3, 5}, r, 0.5, 1.5);
    cases.push_back({"matmul-batched", {a, b}, [=]() { return ws(ops::matmul(a, b), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 3, 7, 6}, r);
    Tensor w = rand_t({4, 3, 3, 3}, r, -0.5, 0.5);
    Tensor bias = rand_t({4}, r, -0.2, 0.2);
    Tensor p = rand_t({2, 4, 4, 3}, r, 0.5, 1.5);
    cases.push_back({"conv2d-strided", {x, w, bias}, [=]() {
      return ws(ops::conv2d(x, w, &bias, 2, 1, 1), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({1, 4, 5, 5}, r);
    Tensor w = rand_t({6, 2, 3, 3}, r, -0.5, 0.5);
    Tensor bias = rand_t({6}, r, -0.2, 0.2);
    Tensor p = rand_t({1, 6, 5, 5}, r, 0.5, 1.5);
    cases.push_back({"conv2d-grouped", {x, w, bias}, [=]() {
      return ws(ops::conv2d(x, w, &bias, 1, 1, 2), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({1, 2, 5, 5}, r);
    Tensor p = rand_t({1, 2, 3, 3}, r, 0.5, 1.5);
    cases.push_back({"pool-avg", {x}, [=]() {
      return ws(ops::pool(ops::PoolKind::avg, x, 3, 2, 1), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_distinct({1, 2, 6, 6}, r);
    Tensor p = rand_t({1, 2, 3, 3}, r, 0.5, 1.5);
    cases.push_back({"pool-max", {x}, [=]() {
      return ws(ops::pool(ops::PoolKind::max, x, 2, 2), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 3, 4, 3}, r);
    Tensor p = rand_t({2, 3, 1, 1}, r, 0.5, 1.5);
    cases.push_back({"global-avg", {x}, [=]() {
      return ws(ops::global_pool(ops::PoolKind::avg, x), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_distinct({2, 3, 3, 4}, r);
    Tensor p = rand_t({2, 3, 1, 1}, r, 0.5, 1.5);
    cases.push_back({"global-max", {x}, [=]() {
      return ws(ops::global_pool(ops::PoolKind::max, x), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 4, 3, 3}, r);
    Tensor p = rand_t({2, 1, 3, 3}, r, 0.5, 1.5);
    cases.push_back({"channel-mean", {x}, [=]() {
      return ws(ops::channel_reduce(ops::ReduceKind::mean, x), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_distinct({2, 4, 3, 3}, r);
    Tensor p = rand_t({2, 1, 3, 3}, r, 0.5, 1.5);
    cases.push_back({"channel-max", {x}, [=]() {
      return ws(ops::channel_reduce(ops::ReduceKind::max, x), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({3, 5}, r, -2.0, 2.0);
    Tensor p = probe_like(x, r);
    cases.push_back({"softmax", {x}, [=]() { return ws(ops::softmax(x, -1), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({1, 3, 5, 5}, r);
    Tensor p = rand_t({1, 27, 9}, r, 0.5, 1.5);
    cases.push_back({"unfold", {x}, [=]() { return ws(ops::unfold(x, 3, 2, 1), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({3, 4, 2, 2}, r);
    Tensor gamma = rand_t({4}, r, 0.5, 1.5), beta = rand_t({4}, r, -0.3, 0.3);
    Tensor rm = Tensor::zeros({4}), rv = Tensor::zeros({4});
    std::fill_n(rv.mutable_data(), 4, 1.0);
    Tensor p = rand_t({3, 4, 2, 2}, r, 0.5, 1.5);
    cases.push_back({"batchnorm-train", {x, gamma, beta}, [=]() mutable {
      return ws(ops::batchnorm(x, gamma, beta, 1e-5, true, rm, rv, 0.1), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({3, 4, 2, 2}, r);
    Tensor gamma = rand_t({4}, r, 0.5, 1.5), beta = rand_t({4}, r, -0.3, 0.3);
    Tensor rm = rand_t({4}, r, -0.2, 0.2), rv = rand_t({4}, r, 0.5, 1.5);
    Tensor p = rand_t({3, 4, 2, 2}, r, 0.5, 1.5);
    cases.push_back({"batchnorm-eval", {x, gamma, beta}, [=]() mutable {
      return ws(ops::batchnorm(x, gamma, beta, 1e-5, false, rm, rv, 0.1), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 5, 3, 2}, r);
    Tensor gamma = rand_t({5}, r, 0.5, 1.5), beta = rand_t({5}, r, -0.3, 0.3);
    Tensor p = rand_t({2, 5, 3, 2}, r, 0.5, 1.5);
    cases.push_back({"layernorm", {x, gamma, beta}, [=]() {
      return ws(ops::layernorm_channel(x, gamma, beta, 1e-5), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({2, 3, 4}, r);
    Tensor p = rand_t({4, 6}, r, 0.5, 1.5);
    cases.push_back({"reshape-transpose", {x}, [=]() {
      return ws(ops::reshape(ops::transpose(x, {2, 0, 1}), {4, 6}), p);
    }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({7, 3}, r);
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int64_t i = 0; i < 12; ++i) idx->push_back(r.below(22) - 1);  // includes -1 taps
    Tensor p = rand_t({3, 4}, r, 0.5, 1.5);
    cases.push_back({"gather", {x}, [=]() { return ws(ops::gather(x, idx, {3, 4}), p); }});
  }
  {
    Rng r = fresh();
    Tensor a = rand_t({2, 3, 2}, r), b = rand_t({2, 5, 2}, r);
    Tensor p = rand_t({2, 8, 2}, r, 0.5, 1.5);
    cases.push_back({"concat", {a, b}, [=]() { return ws(ops::concat(a, b, 1), p); }});
  }
  {
    Rng r = fresh();
    Tensor x = rand_t({3, 4}, r);
    cases.push_back({"mean-all", {x}, [=]() { return ops::mean_all(x); }});
  }
  {
    Rng r = fresh();
    Tensor logits = rand_t({5, 7}, r, -2.0, 2.0);
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < 5; ++i) labels.push_back(r.below(7));
    cases.push_back({"cross-entropy", {logits}, [=]() {
      return ops::cross_entropy(logits, labels);
    }});
  }
  return cases;
}

std::vector<GradCase> block_cases(uint64_t seed) {
  std::vector<GradCase> cases;
  uint64_t salt = 100;
  auto fresh = [&]() { return Rng(seed * 1000003ULL + salt++); };

  {
    Rng r = fresh();
    auto ca = std::make_shared<ChannelAttention>(6, 3, r);
    Tensor x = rand_distinct({2, 6, 4, 4}, r);
    Tensor p = rand_t({2, 6, 1, 1}, r, 0.5, 1.5);
    cases.push_back({"channel-attention", {x, ca->fc1.weight, ca->fc2.bias}, [=]() {
      return ws(ca->forward(x), p);
    }});
  }
  {
    Rng r = fresh();
    auto sa = std::make_shared<SpatialAttention>(r);
    Tensor x = rand_distinct({1, 3, 6, 6}, r);
    Tensor p = rand_t({1, 1, 6, 6}, r, 0.5, 1.5);
    cases.push_back({"spatial-attention", {x, sa->conv.weight}, [=]() {
      return ws(sa->forward(x), p);
    }});
  }
  {
    Rng r = fresh();
    auto blk = std::make_shared<RFCBAMConv>(RfcbamConfig{4, 6, 3, 1, 2, false}, r);
    // The slot generator ships zero-initialized; perturb it so this check
    // does not sit on the uniform-softmax symmetry point.
    fill_rand(blk->rf_gen.weight, r, -0.2, 0.2);
    Tensor x = rand_t({1, 4, 5, 5}, r);
    Tensor p = rand_t({1, 6, 5, 5}, r, 0.5, 1.5);
    cases.push_back({"rfcbam-conv", {x, blk->rf_gen.weight, blk->ca.fc1.weight}, [=]() {
      return ws(blk->forward_prenorm(x), p);
    }});
  }
  {
    Rng r = fresh();
    auto stage = std::make_shared<BamStage>(4, 6, 2, 2, false, r);
    fill_rand(stage->block1.rf_gen.weight, r, -0.2, 0.2);
    fill_rand(stage->block2.rf_gen.weight, r, -0.2, 0.2);
    Tensor x = rand_t({1, 4, 4, 4}, r);
    Tensor p = rand_t({1, 6, 2, 2}, r, 0.5, 1.5);
    cases.push_back({"bam-stage", {x, stage->shortcut.weight, stage->shortcut.bias}, [=]() {
      return ws(stage->forward(x, true), p);
    }});
  }
  {
    Rng r = fresh();
    auto mha = std::make_shared<MhaParams>(8, r);
    Tensor x = rand_t({1, 8, 5, 5}, r);
    Tensor p = rand_t({1, 8, 5, 5}, r, 0.5, 1.5);
    cases.push_back({"window-attention", {x, mha->wq.weight, mha->wo.bias}, [=]() {
      WindowPartition part = window_partition(x, 4);
      Tensor att = mha_forward(part.windows, *mha, 2, &part.mask);
      return ws(window_merge(part, att), p);
    }});
  }
  {
    Rng r = fresh();
    auto ffn = std::make_shared<ConvFFN>(6, 12, r);
    Tensor x = rand_t({1, 6, 4, 4}, r);
    Tensor p = rand_t({1, 6, 4, 4}, r, 0.5, 1.5);
    cases.push_back({"conv-ffn", {x, ffn->expand.bias, ffn->project.weight}, [=]() {
      return ws(ffn->forward(x), p);
    }});
  }
  {
    Rng r = fresh();
    auto am = std::make_shared<AssociationModule>(AmConfig{8, 2, 2, 16}, r);
    Tensor x = rand_t({1, 8, 3, 3}, r);
    Tensor p = rand_t({1, 8, 3, 3}, r, 0.5, 1.5);
    cases.push_back({"association-module", {x, am->ln.gamma, am->mha.wv.bias, am->ffn.dw.bias},
                     [=]() { return ws(am->forward(x), p); }});
  }
  {
    Rng r = fresh();
    auto enc = std::make_shared<HybridEncoder>(4, 6, 8, 8, 2, r);
    Tensor s1 = rand_t({1, 4, 4, 4}, r);
    Tensor s2 = rand_t({1, 6, 2, 2}, r);
    Tensor s3 = rand_t({1, 8, 2, 2}, r);
    Tensor p1 = rand_t({1, 8, 4, 4}, r, 0.5, 1.5);
    Tensor p2 = rand_t({1, 8, 2, 2}, r, 0.5, 1.5);
    Tensor p3 = rand_t({1, 8, 2, 2}, r, 0.5, 1.5);
    cases.push_back({"hybrid-encoder", {s1, s2, s3, enc->proj3.bias, enc->mha.wo.weight}, [=]() {
      EncoderOut out = enc->forward({s1, s2, s3});
      return ops::add(ops::add(ws(out.f1, p1), ws(out.f2, p2)), ws(out.f3, p3));
    }});
  }
  return cases;
}

std::vector<GradCase> pipeline_cases(uint64_t seed) {
  std::vector<GradCase> cases;
  Rng r(seed * 1000003ULL + 999);

  PipelineConfig cfg;
  cfg.preset = Preset::toy;
  cfg.dim = 16;
  cfg.encoder_heads = 2;
  cfg.am_heads = 2;
  cfg.am_ffn = 32;
  cfg.window = 2;
  cfg.queries = 4;
  cfg.reduction = 4;
  cfg.seed = seed * 31 + 7;
  auto model = std::make_shared<AssociationPipeline>(cfg);

  ModuleGraph g = model->graph();
  auto leaf = [&](const char* name) {
    const Tensor* t = g.find(name);
    if (!t) throw ValueError(std::string("pipeline grad case: no parameter ") + name);
    return *t;
  };
  std::vector<Tensor> leaves = {
      leaf("backbone.stem.bn.gamma"),
      leaf("encoder.proj3.bias"),
      leaf("bam.stage2.shortcut.bias"),
      leaf("am.mha.wo.bias"),
  };
  Tensor image = rand_t({1, 3, 32, 32}, r, 0.0, 1.0);
  Tensor p = rand_t({1, 16, 1, 1}, r, 0.5, 1.5);
  cases.push_back({"full-pipeline", leaves, [=]() {
    PipelineOut out = model->forward(image, false);
    return ws(out.f3_hat, p);
  }});
  return cases;
}

}  // namespace ae
