#pragma once

#include <string>

#include "ae/layers.hpp"
#include "ae/module.hpp"

namespace ae {

// Feature map cut into non-overlapping ws x ws windows, each flattened to a
// token sequence. The map is padded up to window multiples; padded cells are
// zero-filled and excluded from attention by the additive key mask.
struct WindowPartition {
  int64_t n = 0, c = 0, h = 0, w = 0;  // source extents
  int64_t ws = 0;
  int64_t hp = 0, wp = 0;              // padded extents
  int64_t nwin = 0;                    // windows per image
  Tensor windows;                      // (N*nwin, ws*ws, C)
  Tensor mask;                         // (N*nwin, 1, 1, ws*ws), 0 valid / -1e30 padded
};

WindowPartition window_partition(const Tensor& x, int64_t ws);

// Exact inverse over the valid region: scatters tokens (N*nwin, ws*ws, C)
// back to (N, C, H, W), dropping padded cells.
Tensor window_merge(const WindowPartition& p, const Tensor& tokens);

// Multi-head attention over token sequences (B, T, C). Queries are scaled
// before the head split so both evaluation paths share every rounding step.
struct MhaParams {
  nn::Linear wq, wk, wv, wo;

  MhaParams() = default;
  MhaParams(int64_t dim, Rng& rng);

  void reg(ModuleGraph& g, const std::string& prefix) const;
};

// Standard path: materializes the (B, heads, T, T) attention matrix, records
// on the active tape. mask, when given, must broadcast against it, e.g.
// (B, 1, 1, T) for key masking.
Tensor mha_forward(const Tensor& x, const MhaParams& p, int64_t heads, const Tensor* mask);

// Evaluation-only path holding one logit row at a time (O(T) extra memory
// instead of O(T^2)). Arithmetic mirrors mha_forward operation for
// operation, so results are bitwise identical. Throws if a tape is active.
Tensor mha_forward_streaming(const Tensor& x, const MhaParams& p, int64_t heads,
                             const Tensor* mask);

// Post-softmax attention weights (B, heads, T, T) for inspection tooling.
Tensor mha_attention_probs(const Tensor& x, const MhaParams& p, int64_t heads,
                           const Tensor* mask);

// Position-wise feed-forward on feature maps: 1x1 expand, 3x3 depthwise,
// GELU, 1x1 project, residual.
struct ConvFFN {
  nn::Conv2d expand;
  nn::Conv2d dw;
  nn::Conv2d project;

  ConvFFN() = default;
  ConvFFN(int64_t dim, int64_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

struct AmConfig {
  int64_t dim = 256;
  int64_t heads = 8;
  int64_t window = 4;
  int64_t ffn_hidden = 1024;
};

// Association module: pre-norm windowed attention with a residual, then the
// convolutional FFN. Shape-preserving on (N, dim, H, W).
struct AssociationModule {
  AmConfig cfg;
  nn::LayerNormChannel ln;
  MhaParams mha;
  ConvFFN ffn;

  AssociationModule() = default;
  AssociationModule(const AmConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void reg(ModuleGraph& g, const std::string& prefix) const;
};

// Element-wise fusion of the association output with its input branch.
Tensor fuse_association(const Tensor& fa, const Tensor& fb);

}  // namespace ae
