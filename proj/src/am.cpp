#include "ae/am.hpp"

#include <cmath>

#include "ae/ops.hpp"

namespace ae {

namespace {

constexpr double kMaskedOut = -1e30;

void require_tokens(const Tensor& x, const char* what) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(what) + " expects (batch, tokens, channels), got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

WindowPartition window_partition(const Tensor& x, int64_t ws) {
  if (x.rank() != 4) throw ShapeError("window_partition expects NCHW input");
  if (ws < 1) throw ValueError("window size must be >= 1");
  WindowPartition p;
  p.n = x.extent(0);
  p.c = x.extent(1);
  p.h = x.extent(2);
  p.w = x.extent(3);
  p.ws = ws;
  p.hp = (p.h + ws - 1) / ws * ws;
  p.wp = (p.w + ws - 1) / ws * ws;
  const int64_t nwh = p.hp / ws, nww = p.wp / ws;
  p.nwin = nwh * nww;
  const int64_t b = p.n * p.nwin;
  const int64_t t = ws * ws;

  auto index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(b * t * p.c));
  std::vector<double> mask_data(static_cast<size_t>(b * t), 0.0);
  for (int64_t bi = 0; bi < b; ++bi) {
    const int64_t ni = bi / p.nwin;
    const int64_t wi = bi % p.nwin;
    const int64_t wy = (wi / nww) * ws;
    const int64_t wx = (wi % nww) * ws;
    for (int64_t tok = 0; tok < t; ++tok) {
      const int64_t y = wy + tok / ws;
      const int64_t xx = wx + tok % ws;
      const bool valid = y < p.h && xx < p.w;
      if (!valid) mask_data[static_cast<size_t>(bi * t + tok)] = kMaskedOut;
      int64_t* row = index->data() + (bi * t + tok) * p.c;
      for (int64_t ci = 0; ci < p.c; ++ci) {
        row[ci] = valid ? ((ni * p.c + ci) * p.h + y) * p.w + xx : -1;
      }
    }
  }
  p.windows = ops::gather(x, index, {b, t, p.c});
  p.mask = Tensor({b, 1, 1, t}, std::move(mask_data));
  return p;
}

Tensor window_merge(const WindowPartition& p, const Tensor& tokens) {
  const int64_t t = p.ws * p.ws;
  const Shape expect = {p.n * p.nwin, t, p.c};
  if (tokens.shape() != expect) {
    throw ShapeError("window_merge expects tokens of shape " + shape_str(expect) + ", got " +
                     shape_str(tokens.shape()));
  }
  const int64_t nww = p.wp / p.ws;
  auto index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(p.n * p.c * p.h * p.w));
  int64_t* out = index->data();
  for (int64_t ni = 0; ni < p.n; ++ni) {
    for (int64_t ci = 0; ci < p.c; ++ci) {
      for (int64_t y = 0; y < p.h; ++y) {
        for (int64_t xx = 0; xx < p.w; ++xx) {
          const int64_t bi = ni * p.nwin + (y / p.ws) * nww + xx / p.ws;
          const int64_t tok = (y % p.ws) * p.ws + xx % p.ws;
          *out++ = (bi * t + tok) * p.c + ci;
        }
      }
    }
  }
  return ops::gather(tokens, index, {p.n, p.c, p.h, p.w});
}

MhaParams::MhaParams(int64_t dim, Rng& rng)
    : wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng) {}

void MhaParams::reg(ModuleGraph& g, const std::string& prefix) const {
  wq.reg(g, prefix + ".wq");
  wk.reg(g, prefix + ".wk");
  wv.reg(g, prefix + ".wv");
  wo.reg(g, prefix + ".wo");
}

namespace {

struct MhaDims {
  int64_t b, t, c, dh;
  double scale;
};

MhaDims mha_dims(const Tensor& x, int64_t heads, const char* what) {
  require_tokens(x, what);
  MhaDims d;
  d.b = x.extent(0);
  d.t = x.extent(1);
  d.c = x.extent(2);
  if (heads < 1 || d.c % heads != 0) {
    throw ValueError(std::string(what) + ": channels must split evenly across heads");
  }
  d.dh = d.c / heads;
  d.scale = 1.0 / std::sqrt(static_cast<double>(d.dh));
  return d;
}

void check_mask(const Tensor* mask, int64_t b, int64_t t, const char* what) {
  if (!mask) return;
  const Shape expect = {b, 1, 1, t};
  if (mask->shape() != expect) {
    throw ShapeError(std::string(what) + ": mask must have shape " + shape_str(expect) +
                     ", got " + shape_str(mask->shape()));
  }
}

Tensor split_heads(const Tensor& x, int64_t b, int64_t t, int64_t heads, int64_t dh) {
  return ops::transpose(ops::reshape(x, {b, t, heads, dh}), {0, 2, 1, 3});
}

}  // namespace

Tensor mha_forward(const Tensor& x, const MhaParams& p, int64_t heads, const Tensor* mask) {
  const MhaDims d = mha_dims(x, heads, "mha_forward");
  check_mask(mask, d.b, d.t, "mha_forward");
  Tensor q = split_heads(ops::scale(p.wq.forward(x), d.scale), d.b, d.t, heads, d.dh);
  Tensor k = split_heads(p.wk.forward(x), d.b, d.t, heads, d.dh);
  Tensor v = split_heads(p.wv.forward(x), d.b, d.t, heads, d.dh);
  Tensor att = ops::matmul(q, ops::transpose(k, {0, 1, 3, 2}));
  if (mask) att = ops::add(att, *mask);
  att = ops::softmax(att, -1);
  Tensor ctx = ops::reshape(ops::transpose(ops::matmul(att, v), {0, 2, 1, 3}), {d.b, d.t, d.c});
  return p.wo.forward(ctx);
}

Tensor mha_attention_probs(const Tensor& x, const MhaParams& p, int64_t heads,
                           const Tensor* mask) {
  const MhaDims d = mha_dims(x, heads, "mha_attention_probs");
  check_mask(mask, d.b, d.t, "mha_attention_probs");
  Tensor q = split_heads(ops::scale(p.wq.forward(x), d.scale), d.b, d.t, heads, d.dh);
  Tensor k = split_heads(p.wk.forward(x), d.b, d.t, heads, d.dh);
  Tensor att = ops::matmul(q, ops::transpose(k, {0, 1, 3, 2}));
  if (mask) att = ops::add(att, *mask);
  return ops::softmax(att, -1);
}

Tensor mha_forward_streaming(const Tensor& x, const MhaParams& p, int64_t heads,
                             const Tensor* mask) {
  if (Tape::current() != nullptr) {
    throw ValueError("streaming attention cannot record gradients; use mha_forward");
  }
  const MhaDims d = mha_dims(x, heads, "mha_forward_streaming");
  check_mask(mask, d.b, d.t, "mha_forward_streaming");
  Tensor q = split_heads(ops::scale(p.wq.forward(x), d.scale), d.b, d.t, heads, d.dh);
  Tensor k = split_heads(p.wk.forward(x), d.b, d.t, heads, d.dh);
  Tensor v = split_heads(p.wv.forward(x), d.b, d.t, heads, d.dh);

  // One logit row at a time. Loop nests copy the batched-matmul and softmax
  // element orders exactly, so every rounding matches the standard path.
  Tensor ctx_heads = Tensor::zeros({d.b, heads, d.t, d.dh});
  double* ctx = ctx_heads.mutable_data();
  const double* qp = q.data();
  const double* kp = k.data();
  const double* vp = v.data();
  const double* mp = mask ? mask->data() : nullptr;
  std::vector<double> row(static_cast<size_t>(d.t));
  for (int64_t bi = 0; bi < d.b; ++bi) {
    const double* mrow = mp ? mp + bi * d.t : nullptr;
    for (int64_t hi = 0; hi < heads; ++hi) {
      const int64_t plane = (bi * heads + hi) * d.t * d.dh;
      const double* qb = qp + plane;
      const double* kb = kp + plane;
      const double* vb = vp + plane;
      double* cb = ctx + plane;
      for (int64_t i = 0; i < d.t; ++i) {
        const double* qi = qb + i * d.dh;
        for (int64_t j = 0; j < d.t; ++j) {
          const double* kj = kb + j * d.dh;
          double acc = 0.0;
          for (int64_t dd = 0; dd < d.dh; ++dd) acc += qi[dd] * kj[dd];
          row[static_cast<size_t>(j)] = mrow ? acc + mrow[j] : acc;
        }
        double m = row[0];
        for (int64_t j = 1; j < d.t; ++j) m = std::max(m, row[static_cast<size_t>(j)]);
        double sum = 0.0;
        for (int64_t j = 0; j < d.t; ++j) {
          const double e = std::exp(row[static_cast<size_t>(j)] - m);
          row[static_cast<size_t>(j)] = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < d.t; ++j) row[static_cast<size_t>(j)] *= inv;
        double* ci = cb + i * d.dh;
        for (int64_t j = 0; j < d.t; ++j) {
          const double av = row[static_cast<size_t>(j)];
          const double* vj = vb + j * d.dh;
          for (int64_t dd = 0; dd < d.dh; ++dd) ci[dd] += av * vj[dd];
        }
      }
    }
  }
  Tensor out = ops::reshape(ops::transpose(ctx_heads, {0, 2, 1, 3}), {d.b, d.t, d.c});
  return p.wo.forward(out);
}

ConvFFN::ConvFFN(int64_t dim, int64_t hidden, Rng& rng)
    : expand(dim, hidden, 1, 1, 0, rng),
      dw(hidden, hidden, 3, 1, 1, rng, true, hidden),
      project(hidden, dim, 1, 1, 0, rng) {}

Tensor ConvFFN::forward(const Tensor& x) const {
  return ops::add(x, project.forward(ops::gelu(dw.forward(expand.forward(x)))));
}

void ConvFFN::reg(ModuleGraph& g, const std::string& prefix) const {
  expand.reg(g, prefix + ".expand");
  dw.reg(g, prefix + ".dw");
  project.reg(g, prefix + ".project");
}

AssociationModule::AssociationModule(const AmConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      ln(cfg_.dim),
      mha(cfg_.dim, rng),
      ffn(cfg_.dim, cfg_.ffn_hidden, rng) {
  if (cfg.dim < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0) {
    throw ValueError("association module: dim must split evenly across heads");
  }
  if (cfg.window < 1) throw ValueError("association module: window must be >= 1");
}

Tensor AssociationModule::forward(const Tensor& x) const {
  WindowPartition part = window_partition(ln.forward(x), cfg.window);
  Tensor att = mha_forward(part.windows, mha, cfg.heads, &part.mask);
  Tensor h = ops::add(x, window_merge(part, att));
  return ffn.forward(h);
}

void AssociationModule::reg(ModuleGraph& g, const std::string& prefix) const {
  ln.reg(g, prefix + ".ln");
  mha.reg(g, prefix + ".mha");
  ffn.reg(g, prefix + ".ffn");
}

Tensor fuse_association(const Tensor& fa, const Tensor& fb) {
  if (fa.shape() != fb.shape()) {
    throw ShapeError("fusion requires matching shapes, got " + shape_str(fa.shape()) + " and " +
                     shape_str(fb.shape()));
  }
  return ops::add(fa, fb);
}

}  // namespace ae
