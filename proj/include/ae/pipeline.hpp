#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ae/am.hpp"
#include "ae/bam.hpp"
#include "ae/layers.hpp"
#include "ae/module.hpp"

namespace ae {

// Backbone size presets. "toy" is a four-block miniature for tests and the
// patch pretraining flow; the other two follow the canonical 34- and 50-layer
// residual layouts (feature extractor only, no classifier head).
enum class Preset { toy, r34_shape, r50_shape };

Preset parse_preset(const std::string& name);
std::string preset_name(Preset p);

struct BasicBlock {
  nn::Conv2d conv1, conv2;
  nn::BatchNorm2d bn1, bn2;
  nn::Conv2d ds_conv;
  nn::BatchNorm2d ds_bn;
  bool has_ds = false;

  BasicBlock() = default;
  BasicBlock(int64_t in, int64_t out, int64_t stride, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct Bottleneck {
  nn::Conv2d conv1, conv2, conv3;
  nn::BatchNorm2d bn1, bn2, bn3;
  nn::Conv2d ds_conv;
  nn::BatchNorm2d ds_bn;
  bool has_ds = false;

  Bottleneck() = default;
  Bottleneck(int64_t in, int64_t mid, int64_t stride, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct BackboneTaps {
  Tensor s1, s2, s3;  // strides 8, 16, 32
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(Preset preset, Rng& rng);

  Tensor forward_stem(const Tensor& x, bool train);
  // Stem plus the first two stages; this is the prefix the background branch
  // shares with classification pretraining.
  Tensor forward_to_s1(const Tensor& x, bool train);
  BackboneTaps forward(const Tensor& x, bool train);

  void reg(ModuleGraph& g, const std::string& prefix) const;
  void reg_to_s1(ModuleGraph& g, const std::string& prefix) const;

  int64_t s1_channels() const { return tap_ch_[0]; }
  int64_t s2_channels() const { return tap_ch_[1]; }
  int64_t s3_channels() const { return tap_ch_[2]; }

 private:
  struct Stage {
    std::vector<BasicBlock> basic;
    std::vector<Bottleneck> bottleneck;
    Tensor forward(const Tensor& x, bool train);
    void reg(ModuleGraph& g, const std::string& prefix) const;
  };

  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  int64_t pool_window_ = 0, pool_stride_ = 0, pool_padding_ = 0;
  std::array<Stage, 4> stages_;
  std::array<int64_t, 3> tap_ch_ = {0, 0, 0};
};

struct EncoderOut {
  Tensor f1, f2, f3;
};

// Projects the three taps to a common width and runs exactly one pre-norm
// global attention layer over the deepest map. Zeroing the attention output
// projection reduces F3 to the plain 1x1 projection of S3.
struct HybridEncoder {
  int64_t dim = 0, heads = 0;
  nn::Conv2d proj1, proj2, proj3;
  nn::LayerNormChannel ln1;
  MhaParams mha;

  HybridEncoder() = default;
  HybridEncoder(int64_t c1, int64_t c2, int64_t c3, int64_t dim, int64_t heads,
                Rng& rng);

  EncoderOut forward(const BackboneTaps& taps) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

// Position of a selected query: pyramid level plus cell coordinates within
// that level's map.
struct QueryIndex {
  int64_t scale = 0, y = 0, x = 0;
};

struct QuerySelection {
  std::vector<QueryIndex> indices;  // unique, ordered by descending score
  std::vector<double> scores;       // non-increasing
  Tensor embeddings;                // (K, dim)
};

// Shared 1x1 scoring head over the pyramid; picks the top-K positions by
// score, breaking ties by (scale, y, x) ascending.
struct QuerySelector {
  nn::Conv2d score;

  QuerySelector() = default;
  QuerySelector(int64_t dim, Rng& rng);

  QuerySelection select(const std::vector<Tensor>& maps, int64_t k) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

// Renders a selection as CSV with header rank,scale,y,x,score.
std::string selection_csv(const QuerySelection& sel);

struct TraceLine {
  std::string name;
  Shape shape;
};

struct PipelineConfig {
  Preset preset = Preset::toy;
  int64_t dim = 256;
  int64_t encoder_heads = 8;
  int64_t am_heads = 8;
  int64_t am_ffn = 1024;
  int64_t window = 4;
  int64_t queries = 300;
  int64_t reduction = 8;
  bool use_ae = true;
  bool use_spatial = false;
  uint64_t seed = 0;
};

struct PipelineOut {
  BackboneTaps taps;
  Tensor f1, f2, f3;
  Tensor fb, fa, fused;  // defined only when the association branch is on
  Tensor f3_hat;
  QuerySelection sel;
  std::vector<TraceLine> trace;
};

// Full encoder pipeline. Shared components (backbone, hybrid encoder, query
// head) draw from one RNG stream and the association branch from a second,
// derived stream, so toggling use_ae never perturbs the shared weights.
class AssociationPipeline {
 public:
  explicit AssociationPipeline(const PipelineConfig& cfg);

  PipelineOut forward(const Tensor& image, bool train);
  ModuleGraph graph() const;

  // Zeroes the final producer of each association-branch output so the
  // branch contributes exactly nothing; downstream results must then match
  // the branchless baseline bit for bit.
  void zero_ae_branch_outputs();

  const PipelineConfig& config() const { return cfg_; }

  Backbone backbone;
  BackgroundAttentionModule bam;
  AssociationModule am;
  HybridEncoder encoder;
  QuerySelector qsel;

 private:
  PipelineConfig cfg_;
};

// Patch classifier for pretraining: shares the backbone prefix and the
// background branch of an existing model, adds a pooled linear head.
struct BamClassifier {
  AssociationPipeline* model = nullptr;
  nn::Linear head;
  int64_t num_classes = 0;

  Tensor forward(const Tensor& x, bool train);
  ModuleGraph graph() const;
};

BamClassifier attach_head(AssociationPipeline& model, int64_t num_classes, Rng& rng);
AssociationPipeline& strip_head(BamClassifier& clf);

}  // namespace ae
