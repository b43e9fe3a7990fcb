#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "ae/bam.hpp"
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

void zero_all(Tensor t) { std::fill_n(t.mutable_data(), t.numel(), 0.0); }

}  // namespace

TEST_CASE("module maps the early backbone tap to the embedding width at 1/4 extent") {
  Rng rng(61);
  BackgroundAttentionModule bam({128, 256, 8, false}, rng);
  Tensor s1 = Tensor::rand_uniform({1, 128, 80, 80}, rng, -0.5, 0.5);
  Tensor fb = bam.forward(s1, false);
  CHECK(fb.shape() == Shape{1, 256, 20, 20});
}

TEST_CASE("stage with a dead main path degenerates to relu of the shortcut") {
  Rng rng(62);
  BamStage stage(4, 6, 2, 2, false, rng);
  // The main path ends in block2's BatchNorm; zero scale and shift kill it.
  zero_all(stage.block2.bn.gamma);
  zero_all(stage.block2.bn.beta);

  Tensor x = Tensor::rand_uniform({2, 4, 8, 8}, rng, -1.0, 1.0);
  Tensor got = stage.forward(x, false);
  Tensor want = ops::relu(stage.shortcut.forward(x));
  CHECK(bitwise_equal(got, want));
}

TEST_CASE("stage output is nonnegative and residual-sensitive") {
  Rng rng(63);
  BamStage stage(4, 6, 1, 2, false, rng);
  Tensor x = Tensor::rand_uniform({1, 4, 6, 6}, rng, -1.0, 1.0);
  Tensor y = stage.forward(x, false);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) >= 0.0);

  // Perturbing the shortcut must reach the output: the residual is live.
  stage.shortcut.bias.mutable_data()[0] += 5.0;
  Tensor y2 = stage.forward(x, false);
  CHECK_FALSE(bitwise_equal(y, y2));
}

TEST_CASE("attach and strip of the classifier head leave the graph unchanged") {
  PipelineConfig cfg;
  cfg.preset = Preset::toy;
  cfg.seed = 7;
  AssociationPipeline model(cfg);

  auto names_of = [](const ModuleGraph& g) {
    std::vector<std::string> names;
    for (const auto& e : g.params()) names.push_back(e.name);
    for (const auto& e : g.buffers()) names.push_back(e.name);
    return names;
  };
  const std::vector<std::string> before = names_of(model.graph());

  Rng head_rng(99);
  BamClassifier clf = attach_head(model, 9, head_rng);
  const std::vector<std::string> with_head = names_of(clf.graph());
  CHECK(with_head.size() > 0);
  CHECK(std::count_if(with_head.begin(), with_head.end(), [](const std::string& n) {
          return n.rfind("head.", 0) == 0;
        }) == 2);

  AssociationPipeline& back = strip_head(clf);
  CHECK(&back == &model);
  CHECK(names_of(model.graph()) == before);
}

TEST_CASE("classifier shares the detector stem instead of duplicating it") {
  PipelineConfig cfg;
  cfg.preset = Preset::toy;
  cfg.seed = 8;
  AssociationPipeline model(cfg);
  Rng head_rng(100);
  BamClassifier clf = attach_head(model, 9, head_rng);

  // Same underlying storage: nudging a stem weight through the detector
  // graph must be visible through the classifier graph.
  ModuleGraph det = model.graph();
  ModuleGraph cls = clf.graph();
  const Tensor* a = det.find("backbone.stem.conv.weight");
  const Tensor* b = cls.find("backbone.stem.conv.weight");
  REQUIRE(a != nullptr);
  REQUIRE(b != nullptr);
  CHECK(a->impl() == b->impl());

  // The classifier graph holds the shared prefix once: its parameter count
  // is strictly below stem+stages plus a fresh copy of the branch.
  const int64_t shared = cls.count_params("backbone");
  CHECK(shared > 0);
  CHECK(cls.count_params("bam") == det.count_params("bam"));
}

TEST_CASE("weights survive a save/load round trip bit for bit") {
  Rng rng(64);
  BackgroundAttentionModule bam({8, 16, 4, false}, rng);
  ModuleGraph g;
  bam.reg(g, "bam");

  const std::string path = "/tmp/ae_test_bam_" + std::to_string(::getpid()) + ".aew1";
  Tensor x = Tensor::rand_uniform({1, 8, 16, 16}, rng, -1.0, 1.0);
  Tensor before = bam.forward(x, false);
  save_weights(g, path);

  Rng rng2(65);
  BackgroundAttentionModule loaded({8, 16, 4, false}, rng2);
  ModuleGraph g2;
  loaded.reg(g2, "bam");
  load_weights(g2, path);
  std::remove(path.c_str());

  Tensor after = loaded.forward(x, false);
  CHECK(bitwise_equal(before, after));
}

TEST_CASE("training mode updates batch statistics, eval mode does not") {
  Rng rng(66);
  BackgroundAttentionModule bam({4, 8, 2, false}, rng);
  Tensor x = Tensor::rand_uniform({2, 4, 8, 8}, rng, -1.0, 1.0);

  const std::vector<double> rm0 = bam.stage1.block1.bn.running_mean.to_vector();
  Tensor e = bam.forward(x, false);
  (void)e;
  CHECK(bam.stage1.block1.bn.running_mean.to_vector() == rm0);

  Tensor t = bam.forward(x, true);
  (void)t;
  CHECK(bam.stage1.block1.bn.running_mean.to_vector() != rm0);
}
