#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ae/gradcheck.hpp"
#include "ae/module.hpp"
#include "ae/ops.hpp"
#include "ae/pipeline.hpp"
#include "ae/rng.hpp"

using namespace ae;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

std::map<std::string, Shape> trace_map(const PipelineOut& out) {
  std::map<std::string, Shape> m;
  for (const TraceLine& line : out.trace) m[line.name] = line.shape;
  return m;
}

PipelineConfig small_config(uint64_t seed) {
  PipelineConfig cfg;
  cfg.preset = Preset::toy;
  cfg.dim = 16;
  cfg.encoder_heads = 2;
  cfg.am_heads = 2;
  cfg.am_ffn = 32;
  cfg.window = 2;
  cfg.queries = 4;
  cfg.reduction = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("toy trace at 640 hits the documented tap and feature extents") {
  PipelineConfig cfg;
  cfg.preset = Preset::toy;
  cfg.seed = 1;
  AssociationPipeline model(cfg);
  Rng rng(2);
  Tensor image = Tensor::rand_uniform({1, 3, 640, 640}, rng, 0.0, 1.0);
  PipelineOut out = model.forward(image, false);

  const auto m = trace_map(out);
  CHECK(m.at("S1") == Shape{1, 32, 80, 80});
  CHECK(m.at("S2") == Shape{1, 64, 40, 40});
  CHECK(m.at("S3") == Shape{1, 128, 20, 20});
  CHECK(m.at("F_b") == Shape{1, 256, 20, 20});
  CHECK(m.at("F_a") == Shape{1, 256, 20, 20});
  CHECK(m.at("F3_hat") == Shape{1, 256, 20, 20});
  CHECK(m.at("queries") == Shape{300, 256});
  CHECK(out.sel.indices.size() == 300);
}

TEST_CASE("trace names every stage exactly once, in flow order") {
  PipelineConfig cfg = small_config(3);
  AssociationPipeline model(cfg);
  Rng rng(4);
  Tensor image = Tensor::rand_uniform({1, 3, 64, 64}, rng, 0.0, 1.0);
  PipelineOut out = model.forward(image, false);

  const std::vector<std::string> want = {"image", "S1", "S2",  "S3",      "F1",      "F2",
                                         "F3",    "F_b", "F_a", "F_a+F_b", "F3_hat", "queries"};
  REQUIRE(out.trace.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) CHECK(out.trace[i].name == want[i]);
}

TEST_CASE("the association branch disappears from the trace when disabled") {
  PipelineConfig cfg = small_config(5);
  cfg.use_ae = false;
  AssociationPipeline model(cfg);
  Rng rng(6);
  Tensor image = Tensor::rand_uniform({1, 3, 32, 32}, rng, 0.0, 1.0);
  PipelineOut out = model.forward(image, false);

  const auto m = trace_map(out);
  CHECK(m.count("F_b") == 0);
  CHECK(m.count("F_a") == 0);
  CHECK(m.count("F3_hat") == 1);
  CHECK(bitwise_equal(out.f3_hat, out.f3));
}

TEST_CASE("deepest feature is enriched by exactly the background map") {
  PipelineConfig cfg = small_config(7);
  AssociationPipeline model(cfg);
  Rng rng(8);
  Tensor image = Tensor::rand_uniform({1, 3, 32, 32}, rng, 0.0, 1.0);
  PipelineOut out = model.forward(image, false);

  REQUIRE(out.fb.shape() == out.f3.shape());
  for (int64_t i = 0; i < out.f3.numel(); ++i)
    CHECK(out.f3_hat.at(i) == out.f3.at(i) + out.fb.at(i));

  // The fused map is the branch's own sum, not the enriched feature.
  for (int64_t i = 0; i < out.fused.numel(); ++i)
    CHECK(out.fused.at(i) == out.fa.at(i) + out.fb.at(i));
}

TEST_CASE("canonical 34-layer backbone parameter count") {
  PipelineConfig cfg;
  cfg.preset = Preset::r34_shape;
  cfg.seed = 9;
  AssociationPipeline model(cfg);
  ModuleGraph g = model.graph();

  // Symbolic budget: stem 7x7x3x64 + bn, then basic-block stages of depth
  // 3/4/6/3 with a projection shortcut at each widening.
  auto basic = [](int64_t in, int64_t out) {
    int64_t p = out * in * 9 + out * out * 9 + 4 * out;  // two convs + two bns
    if (in != out) p += in * out + 2 * out;              // 1x1 downsample + bn
    return p;
  };
  auto stage = [&](int64_t in, int64_t out, int64_t blocks) {
    int64_t p = basic(in, out);
    for (int64_t i = 1; i < blocks; ++i) p += basic(out, out);
    return p;
  };
  const int64_t stem = 64 * 3 * 49 + 2 * 64;
  const int64_t want =
      stem + stage(64, 64, 3) + stage(64, 128, 4) + stage(128, 256, 6) + stage(256, 512, 3);
  CHECK(g.count_params("backbone") == want);
  CHECK(g.count_params("backbone") == 21'284'672);
}

TEST_CASE("end-to-end gradients at 64x64 pass finite differences") {
  PipelineConfig cfg = small_config(11);
  AssociationPipeline model(cfg);
  ModuleGraph g = model.graph();

  auto leaf = [&](const char* name) {
    const Tensor* t = g.find(name);
    REQUIRE(t != nullptr);
    return *t;
  };
  Rng rng(12);
  Tensor image = Tensor::rand_uniform({1, 3, 64, 64}, rng, 0.0, 1.0);
  Tensor probe;

  GradCase c;
  c.name = "pipeline-64";
  c.leaves = {leaf("backbone.stem.bn.gamma"), leaf("encoder.proj3.bias"),
              leaf("bam.stage2.shortcut.bias"), leaf("am.mha.wo.bias")};
  c.forward = [&] {
    PipelineOut out = model.forward(image, false);
    return ops::mean_all(ops::mul(out.f3_hat, out.f3_hat));
  };
  const GradCheckResult r = run_grad_case(c);
  CAPTURE(r.rel_err);
  CHECK(r.pass);
  CHECK(r.rel_err < 1e-4);
}

TEST_CASE("zeroing the encoder attention projection exposes the plain projection") {
  PipelineConfig cfg = small_config(13);
  AssociationPipeline model(cfg);
  std::fill_n(model.encoder.mha.wo.weight.mutable_data(),
              model.encoder.mha.wo.weight.numel(), 0.0);
  std::fill_n(model.encoder.mha.wo.bias.mutable_data(),
              model.encoder.mha.wo.bias.numel(), 0.0);

  Rng rng(14);
  Tensor image = Tensor::rand_uniform({1, 3, 32, 32}, rng, 0.0, 1.0);
  PipelineOut out = model.forward(image, false);
  Tensor projected = model.encoder.proj3.forward(out.taps.s3);
  CHECK(bitwise_equal(out.f3, projected));
}

TEST_CASE("query selection orders by score, then by position") {
  Rng rng(15);
  QuerySelector qsel(4, rng);

  SUBCASE("equal scores fall back to scale-major raster order") {
    std::fill_n(qsel.score.weight.mutable_data(), qsel.score.weight.numel(), 0.0);
    std::fill_n(qsel.score.bias.mutable_data(), qsel.score.bias.numel(), 0.0);
    Tensor m1 = Tensor::rand_uniform({1, 4, 2, 2}, rng, -1.0, 1.0);
    Tensor m2 = Tensor::rand_uniform({1, 4, 1, 2}, rng, -1.0, 1.0);
    QuerySelection sel = qsel.select({m1, m2}, 6);

    const std::vector<QueryIndex> want = {{0, 0, 0}, {0, 0, 1}, {0, 1, 0},
                                          {0, 1, 1}, {1, 0, 0}, {1, 0, 1}};
    REQUIRE(sel.indices.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
      CHECK(sel.indices[i].scale == want[i].scale);
      CHECK(sel.indices[i].y == want[i].y);
      CHECK(sel.indices[i].x == want[i].x);
    }
  }

  SUBCASE("scores dominate when they differ") {
    Tensor m = Tensor::zeros({1, 4, 2, 2});
    // Make position (1,0) the clear winner through the bias-free channel sum.
    std::fill_n(qsel.score.weight.mutable_data(), qsel.score.weight.numel(), 1.0);
    std::fill_n(qsel.score.bias.mutable_data(), qsel.score.bias.numel(), 0.0);
    double* d = m.mutable_data();
    d[2 * 4 + 2] = 3.0;  // channel 2, position (1,0)
    QuerySelection sel = qsel.select({m}, 1);
    CHECK(sel.indices[0].y == 1);
    CHECK(sel.indices[0].x == 0);
    CHECK(sel.scores[0] == 3.0);
  }

  SUBCASE("embeddings copy the feature column of the winner") {
    std::fill_n(qsel.score.weight.mutable_data(), qsel.score.weight.numel(), 0.0);
    std::fill_n(qsel.score.bias.mutable_data(), qsel.score.bias.numel(), 0.0);
    Tensor m = Tensor::rand_uniform({1, 4, 2, 2}, rng, -1.0, 1.0);
    QuerySelection sel = qsel.select({m}, 1);
    // Winner is flat position 0, i.e. (y=0, x=0).
    for (int64_t c = 0; c < 4; ++c) CHECK(sel.embeddings.at(c) == m.at(c * 4));
  }

  SUBCASE("query count is clamped against the map total by the caller contract") {
    Tensor m = Tensor::rand_uniform({1, 4, 2, 2}, rng, -1.0, 1.0);
    CHECK_THROWS_AS(qsel.select({m}, 5), ValueError);
    CHECK_THROWS_AS(qsel.select({m}, 0), ValueError);
    QuerySelection all = qsel.select({m}, 4);
    CHECK(all.indices.size() == 4);  // exhaustive selection is legal
  }
}

TEST_CASE("selection renders as rank,scale,y,x,score rows") {
  QuerySelection sel;
  sel.indices = {{0, 0, 1}, {2, 3, 4}};
  sel.scores = {1.5, -0.25};
  sel.embeddings = Tensor::zeros({2, 1});

  std::istringstream csv(selection_csv(sel));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "rank,scale,y,x,score");
  std::getline(csv, line);
  CHECK(line == "0,0,0,1,1.5");
  std::getline(csv, line);
  CHECK(line == "1,2,3,4,-0.25");
  CHECK_FALSE(std::getline(csv, line));
}

TEST_CASE("forward is deterministic for a fixed seed and input") {
  PipelineConfig cfg = small_config(17);
  Rng rng(18);
  Tensor image = Tensor::rand_uniform({1, 3, 32, 32}, rng, 0.0, 1.0);

  AssociationPipeline a(cfg);
  AssociationPipeline b(cfg);
  CHECK(bitwise_equal(a.forward(image, false).f3_hat, b.forward(image, false).f3_hat));
}

TEST_CASE("branch shutoff restores the baseline bitwise") {
  PipelineConfig cfg = small_config(19);

  AssociationPipeline with_ae(cfg);
  with_ae.zero_ae_branch_outputs();

  PipelineConfig bare = cfg;
  bare.use_ae = false;
  AssociationPipeline without(bare);

  Rng rng(20);
  for (int round = 0; round < 3; ++round) {
    Tensor image = Tensor::rand_uniform({1, 3, 64, 64}, rng, 0.0, 1.0);
    PipelineOut ya = with_ae.forward(image, false);
    PipelineOut yb = without.forward(image, false);
    CHECK(bitwise_equal(ya.f3_hat, yb.f3_hat));
    CHECK(bitwise_equal(ya.sel.embeddings, yb.sel.embeddings));
    // The silenced branch emits exact zeros.
    for (int64_t i = 0; i < ya.fb.numel(); ++i) REQUIRE(ya.fb.at(i) == 0.0);
    for (int64_t i = 0; i < ya.fa.numel(); ++i) REQUIRE(ya.fa.at(i) == 0.0);
  }
}
