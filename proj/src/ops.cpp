#include "ae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ae::ops {

namespace {

double* grad_ptr(const Tensor& t) { return t.impl()->grad.data(); }

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a;  // per out axis, 0 on stretched axes
  std::vector<int64_t> stride_b;
  int64_t n = 0;
  bool same = false;  // shapes identical, fast path
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.same = (a == b);
  const size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1) {
      p.out[i] = std::max(pa[i], pb[i]);
    } else {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  int64_t sa = 1, sb = 1;
  for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
    p.stride_a[i] = (pa[i] == 1) ? 0 : sa;
    p.stride_b[i] = (pb[i] == 1) ? 0 : sb;
    sa *= pa[i];
    sb *= pb[i];
  }
  p.n = shape_numel(p.out);
  return p;
}

// Calls f(out_flat, a_flat, b_flat) for every output element in ascending
// output order.
template <typename F>
void for_each_pair(const BroadcastPlan& p, F&& f) {
  if (p.same) {
    for (int64_t i = 0; i < p.n; ++i) f(i, i, i);
    return;
  }
  const size_t rank = p.out.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < p.n; ++i) {
    f(i, oa, ob);
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      idx[ax]++;
      oa += p.stride_a[ax];
      ob += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      oa -= p.stride_a[ax] * p.out[ax];
      ob -= p.stride_b[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

struct ConvDims {
  int64_t n, c, h, w;       // input
  int64_t o, ig, kh, kw;    // weight: out channels, in-per-group, kernel
  int64_t ho, wo;           // output spatial
  int64_t og;               // out channels per group
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int64_t stride, int64_t padding,
                   int64_t groups, const char* what) {
  require_rank(x, 4, what);
  require_rank(w, 4, what);
  if (stride < 1) throw ValueError(std::string(what) + " stride must be >= 1");
  if (padding < 0) throw ValueError(std::string(what) + " padding must be >= 0");
  if (groups < 1) throw ValueError(std::string(what) + " groups must be >= 1");
  ConvDims d;
  d.n = x.extent(0);
  d.c = x.extent(1);
  d.h = x.extent(2);
  d.w = x.extent(3);
  d.o = w.extent(0);
  d.ig = w.extent(1);
  d.kh = w.extent(2);
  d.kw = w.extent(3);
  if (d.c % groups != 0 || d.o % groups != 0) {
    throw ShapeError(std::string(what) + ": channels not divisible by groups");
  }
  if (d.ig != d.c / groups) {
    throw ShapeError(std::string(what) + ": weight expects " + std::to_string(d.ig) +
                     " channels per group, input provides " + std::to_string(d.c / groups));
  }
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw) {
    throw ShapeError(std::string(what) + ": kernel exceeds padded input extent");
  }
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  d.og = d.o / groups;
  return d;
}

// Valid output range [lo, hi) along one axis for a given kernel offset:
// positions where in = out*stride - padding + k lands inside [0, extent).
void valid_range(int64_t extent, int64_t out_extent, int64_t stride, int64_t padding,
                 int64_t k, int64_t* lo, int64_t* hi) {
  const int64_t shift = padding - k;  // in = out*stride - shift
  *lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const int64_t upper = extent - 1 + shift;
  *hi = upper < 0 ? 0 : std::min(out_extent, upper / stride + 1);
  if (*lo > *hi) *lo = *hi;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.out);
  double* o = out.mutable_data();
  const double* pa = a.data();
  const double* pb = b.data();
  for_each_pair(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] + pb[ib]; });
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record("add", {a, b}, out, [a, b, out, p]() {
      const double* go = grad_ptr(out);
      if (a.requires_grad()) {
        double* ga = grad_ptr(a);
        for_each_pair(p, [&](int64_t i, int64_t ia, int64_t) { ga[ia] += go[i]; });
      }
      if (b.requires_grad()) {
        double* gb = grad_ptr(b);
        for_each_pair(p, [&](int64_t i, int64_t, int64_t ib) { gb[ib] += go[i]; });
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.out);
  double* o = out.mutable_data();
  const double* pa = a.data();
  const double* pb = b.data();
  for_each_pair(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = pa[ia] * pb[ib]; });
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record("mul", {a, b}, out, [a, b, out, p]() {
      const double* go = grad_ptr(out);
      const double* pa2 = a.data();
      const double* pb2 = b.data();
      if (a.requires_grad()) {
        double* ga = grad_ptr(a);
        for_each_pair(p, [&](int64_t i, int64_t ia, int64_t ib) { ga[ia] += go[i] * pb2[ib]; });
      }
      if (b.requires_grad()) {
        double* gb = grad_ptr(b);
        for_each_pair(p, [&](int64_t i, int64_t ia, int64_t ib) { gb[ib] += go[i] * pa2[ia]; });
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  const double* p = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = p[i] > 0.0 ? p[i] : 0.0;
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("relu", {x}, out, [x, out, n]() {
      const double* go = grad_ptr(out);
      const double* p2 = x.data();
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) {
        if (p2[i] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  const double* p = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = 1.0 / (1.0 + std::exp(-p[i]));
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("sigmoid", {x}, out, [x, out, n]() {
      const double* go = grad_ptr(out);
      const double* s = out.data();
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * s[i] * (1.0 - s[i]);
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  const double* p = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    o[i] = 0.5 * p[i] * (1.0 + std::erf(p[i] * kInvSqrt2));
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("gelu", {x}, out, [x, out, n]() {
      const double* go = grad_ptr(out);
      const double* p2 = x.data();
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(p2[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * p2[i] * p2[i]);
        gx[i] += go[i] * (cdf + p2[i] * pdf);
      }
    });
  }
  return out;
}

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b) {
  switch (kind) {
    case EwKind::add:
      if (!b) throw ValueError("elementwise add needs two operands");
      return add(a, *b);
    case EwKind::mul:
      if (!b) throw ValueError("elementwise mul needs two operands");
      return mul(a, *b);
    case EwKind::relu:
      return relu(a);
    case EwKind::sigmoid:
      return sigmoid(a);
    case EwKind::gelu:
      return gelu(a);
  }
  throw ValueError("unknown elementwise kind");
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  const double* p = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = p[i] * s;
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("scale", {x}, out, [x, out, n, s]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * s;
    });
  }
  return out;
}

namespace {

// c[m,n] = a[m,k] * b[k,n]; c must be zeroed. The k loop sits in the middle
// so every output element accumulates in ascending k order while the inner
// loop stays contiguous.
void mm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void mm_acc_nt(const double* dc, const double* b, double* da, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[kk] += s;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void mm_acc_tn(const double* a, const double* dc, double* db, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* dbrow = db + kk * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul operands must have rank >= 2");
  }
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const int64_t m = sa[sa.size() - 2];
  const int64_t k = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2];
  const int64_t n = sb[sb.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const bool shared_b = (b.rank() == 2 && a.rank() > 2);
  if (!shared_b && a.rank() != b.rank()) {
    throw ShapeError("matmul batch ranks differ: " + shape_str(sa) + " x " + shape_str(sb));
  }
  int64_t batch = 1;
  Shape out_shape;
  for (size_t i = 0; i + 2 < sa.size(); ++i) {
    if (!shared_b && sa[i] != sb[i]) {
      throw ShapeError("matmul batch extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    }
    batch *= sa[i];
    out_shape.push_back(sa[i]);
  }
  out_shape.push_back(m);
  out_shape.push_back(n);

  Tensor out = Tensor::zeros(out_shape);
  double* oc = out.mutable_data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    mm(pa + bi * m * k, shared_b ? pb : pb + bi * k * n, oc + bi * m * n, m, k, n);
  }
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record("matmul", {a, b}, out, [a, b, out, batch, m, k, n, shared_b]() {
      const double* go = grad_ptr(out);
      const double* pa2 = a.data();
      const double* pb2 = b.data();
      if (a.requires_grad()) {
        double* ga = grad_ptr(a);
        for (int64_t bi = 0; bi < batch; ++bi) {
          mm_acc_nt(go + bi * m * n, shared_b ? pb2 : pb2 + bi * k * n, ga + bi * m * k, m, k, n);
        }
      }
      if (b.requires_grad()) {
        double* gb = grad_ptr(b);
        for (int64_t bi = 0; bi < batch; ++bi) {
          mm_acc_tn(pa2 + bi * m * k, go + bi * m * n, shared_b ? gb : gb + bi * k * n, m, k, n);
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int64_t stride,
              int64_t padding, int64_t groups) {
  ConvDims d = conv_dims(x, w, stride, padding, groups, "conv2d");
  if (bias && bias->defined()) {
    if (bias->rank() != 1 || bias->extent(0) != d.o) {
      throw ShapeError("conv2d bias must have shape {" + std::to_string(d.o) + "}");
    }
  }
  Tensor out = Tensor::zeros({d.n, d.o, d.ho, d.wo});
  double* op = out.mutable_data();
  const double* xp = x.data();
  const double* wp = w.data();

  for (int64_t ni = 0; ni < d.n; ++ni) {
    for (int64_t g = 0; g < groups; ++g) {
      for (int64_t ol = 0; ol < d.og; ++ol) {
        const int64_t oc = g * d.og + ol;
        double* oplane = op + (ni * d.o + oc) * d.ho * d.wo;
        for (int64_t il = 0; il < d.ig; ++il) {
          const int64_t ic = g * d.ig + il;
          const double* xplane = xp + (ni * d.c + ic) * d.h * d.w;
          const double* wbase = wp + ((oc * d.ig + il) * d.kh) * d.kw;
          for (int64_t kh = 0; kh < d.kh; ++kh) {
            int64_t y0, y1;
            valid_range(d.h, d.ho, stride, padding, kh, &y0, &y1);
            for (int64_t kw = 0; kw < d.kw; ++kw) {
              const double wv = wbase[kh * d.kw + kw];
              int64_t x0, x1;
              valid_range(d.w, d.wo, stride, padding, kw, &x0, &x1);
              for (int64_t y = y0; y < y1; ++y) {
                const double* xrow = xplane + (y * stride - padding + kh) * d.w - padding + kw;
                double* orow = oplane + y * d.wo;
                for (int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  if (bias && bias->defined()) {
    const double* bp = bias->data();
    for (int64_t ni = 0; ni < d.n; ++ni) {
      for (int64_t oc = 0; oc < d.o; ++oc) {
        double* oplane = op + (ni * d.o + oc) * d.ho * d.wo;
        const double bv = bp[oc];
        for (int64_t i = 0; i < d.ho * d.wo; ++i) oplane[i] += bv;
      }
    }
  }

  Tensor bias_t = (bias && bias->defined()) ? *bias : Tensor();
  if (tracing({&x, &w, bias})) {
    out.set_requires_grad(true);
    Tape::current()->record("conv2d", {x, w, bias_t}, out,
                            [x, w, bias_t, out, d, stride, padding, groups]() {
      const double* go = grad_ptr(out);
      const double* xp2 = x.data();
      const double* wp2 = w.data();
      if (x.requires_grad()) {
        double* gx = grad_ptr(x);
        for (int64_t ni = 0; ni < d.n; ++ni) {
          for (int64_t g = 0; g < groups; ++g) {
            for (int64_t ol = 0; ol < d.og; ++ol) {
              const int64_t oc = g * d.og + ol;
              const double* gplane = go + (ni * d.o + oc) * d.ho * d.wo;
              for (int64_t il = 0; il < d.ig; ++il) {
                const int64_t ic = g * d.ig + il;
                double* xplane = gx + (ni * d.c + ic) * d.h * d.w;
                const double* wbase = wp2 + ((oc * d.ig + il) * d.kh) * d.kw;
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                  int64_t y0, y1;
                  valid_range(d.h, d.ho, stride, padding, kh, &y0, &y1);
                  for (int64_t kw = 0; kw < d.kw; ++kw) {
                    const double wv = wbase[kh * d.kw + kw];
                    int64_t x0, x1;
                    valid_range(d.w, d.wo, stride, padding, kw, &x0, &x1);
                    for (int64_t y = y0; y < y1; ++y) {
                      double* xrow = xplane + (y * stride - padding + kh) * d.w - padding + kw;
                      const double* grow = gplane + y * d.wo;
                      for (int64_t ox = x0; ox < x1; ++ox) xrow[ox * stride] += wv * grow[ox];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (w.requires_grad()) {
        double* gw = grad_ptr(w);
        for (int64_t g = 0; g < groups; ++g) {
          for (int64_t ol = 0; ol < d.og; ++ol) {
            const int64_t oc = g * d.og + ol;
            for (int64_t il = 0; il < d.ig; ++il) {
              const int64_t ic = g * d.ig + il;
              double* wbase = gw + ((oc * d.ig + il) * d.kh) * d.kw;
              for (int64_t kh = 0; kh < d.kh; ++kh) {
                int64_t y0, y1;
                valid_range(d.h, d.ho, stride, padding, kh, &y0, &y1);
                for (int64_t kw = 0; kw < d.kw; ++kw) {
                  int64_t x0, x1;
                  valid_range(d.w, d.wo, stride, padding, kw, &x0, &x1);
                  double s = 0.0;
                  for (int64_t ni = 0; ni < d.n; ++ni) {
                    const double* gplane = go + (ni * d.o + oc) * d.ho * d.wo;
                    const double* xplane = xp2 + (ni * d.c + ic) * d.h * d.w;
                    for (int64_t y = y0; y < y1; ++y) {
                      const double* xrow = xplane + (y * stride - padding + kh) * d.w - padding + kw;
                      const double* grow = gplane + y * d.wo;
                      for (int64_t ox = x0; ox < x1; ++ox) s += grow[ox] * xrow[ox * stride];
                    }
                  }
                  wbase[kh * d.kw + kw] += s;
                }
              }
            }
          }
        }
      }
      if (bias_t.defined() && bias_t.requires_grad()) {
        double* gb = grad_ptr(bias_t);
        for (int64_t oc = 0; oc < d.o; ++oc) {
          double s = 0.0;
          for (int64_t ni = 0; ni < d.n; ++ni) {
            const double* gplane = go + (ni * d.o + oc) * d.ho * d.wo;
            for (int64_t i = 0; i < d.ho * d.wo; ++i) s += gplane[i];
          }
          gb[oc] += s;
        }
      }
    });
  }
  return out;
}

Tensor pool(PoolKind kind, const Tensor& x, int64_t window, int64_t stride, int64_t padding) {
  require_rank(x, 4, "pool");
  if (window < 1) throw ValueError("pool window must be >= 1");
  if (stride < 1) throw ValueError("pool stride must be >= 1");
  if (padding < 0) throw ValueError("pool padding must be >= 0");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (window > h + 2 * padding || window > w + 2 * padding) {
    throw ShapeError("pool window exceeds spatial extent");
  }
  const int64_t ho = (h + 2 * padding - window) / stride + 1;
  const int64_t wo = (w + 2 * padding - window) / stride + 1;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  double* op = out.mutable_data();
  const double* xp = x.data();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (kind == PoolKind::max) argmax->assign(static_cast<size_t>(n * c * ho * wo), -1);
  const double inv_area = 1.0 / static_cast<double>(window * window);

  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* xplane = xp + (ni * c + ci) * h * w;
      double* oplane = op + (ni * c + ci) * ho * wo;
      int64_t* amplane =
          kind == PoolKind::max ? argmax->data() + (ni * c + ci) * ho * wo : nullptr;
      for (int64_t y = 0; y < ho; ++y) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          const int64_t iy0 = y * stride - padding;
          const int64_t ix0 = ox * stride - padding;
          if (kind == PoolKind::avg) {
            double s = 0.0;
            for (int64_t kh = 0; kh < window; ++kh) {
              const int64_t iy = iy0 + kh;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kw = 0; kw < window; ++kw) {
                const int64_t ix = ix0 + kw;
                if (ix < 0 || ix >= w) continue;
                s += xplane[iy * w + ix];
              }
            }
            oplane[y * wo + ox] = s * inv_area;
          } else {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_i = -1;
            for (int64_t kh = 0; kh < window; ++kh) {
              const int64_t iy = iy0 + kh;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kw = 0; kw < window; ++kw) {
                const int64_t ix = ix0 + kw;
                if (ix < 0 || ix >= w) continue;
                const double v = xplane[iy * w + ix];
                if (v > best) {
                  best = v;
                  best_i = iy * w + ix;
                }
              }
            }
            oplane[y * wo + ox] = best;
            amplane[y * wo + ox] = best_i;
          }
        }
      }
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("pool", {x}, out,
                            [x, out, kind, argmax, n, c, h, w, ho, wo, window, stride, padding,
                             inv_area]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t ci = 0; ci < c; ++ci) {
          double* xplane = gx + (ni * c + ci) * h * w;
          const double* gplane = go + (ni * c + ci) * ho * wo;
          const int64_t* amplane =
              kind == PoolKind::max ? argmax->data() + (ni * c + ci) * ho * wo : nullptr;
          for (int64_t y = 0; y < ho; ++y) {
            for (int64_t ox = 0; ox < wo; ++ox) {
              const double g = gplane[y * wo + ox];
              if (kind == PoolKind::max) {
                const int64_t bi = amplane[y * wo + ox];
                if (bi >= 0) xplane[bi] += g;
              } else {
                const int64_t iy0 = y * stride - padding;
                const int64_t ix0 = ox * stride - padding;
                for (int64_t kh = 0; kh < window; ++kh) {
                  const int64_t iy = iy0 + kh;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kw = 0; kw < window; ++kw) {
                    const int64_t ix = ix0 + kw;
                    if (ix < 0 || ix >= w) continue;
                    xplane[iy * w + ix] += g * inv_area;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor global_pool(PoolKind kind, const Tensor& x) {
  require_rank(x, 4, "global_pool");
  const int64_t n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor out = Tensor::zeros({n, c, 1, 1});
  double* op = out.mutable_data();
  const double* xp = x.data();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (kind == PoolKind::max) argmax->assign(static_cast<size_t>(n * c), 0);
  for (int64_t i = 0; i < n * c; ++i) {
    const double* plane = xp + i * hw;
    if (kind == PoolKind::avg) {
      double s = 0.0;
      for (int64_t j = 0; j < hw; ++j) s += plane[j];
      op[i] = s / static_cast<double>(hw);
    } else {
      double best = plane[0];
      int64_t bi = 0;
      for (int64_t j = 1; j < hw; ++j) {
        if (plane[j] > best) {
          best = plane[j];
          bi = j;
        }
      }
      op[i] = best;
      (*argmax)[static_cast<size_t>(i)] = bi;
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("global_pool", {x}, out, [x, out, kind, argmax, n, c, hw]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n * c; ++i) {
        if (kind == PoolKind::avg) {
          const double g = go[i] / static_cast<double>(hw);
          double* plane = gx + i * hw;
          for (int64_t j = 0; j < hw; ++j) plane[j] += g;
        } else {
          gx[i * hw + (*argmax)[static_cast<size_t>(i)]] += go[i];
        }
      }
    });
  }
  return out;
}

Tensor channel_reduce(ReduceKind kind, const Tensor& x) {
  require_rank(x, 4, "channel_reduce");
  const int64_t n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  Tensor out = Tensor::zeros({n, 1, x.extent(2), x.extent(3)});
  double* op = out.mutable_data();
  const double* xp = x.data();
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (kind == ReduceKind::max) argmax->assign(static_cast<size_t>(n * hw), 0);
  for (int64_t ni = 0; ni < n; ++ni) {
    const double* base = xp + ni * c * hw;
    double* obase = op + ni * hw;
    for (int64_t j = 0; j < hw; ++j) {
      if (kind == ReduceKind::mean) {
        double s = 0.0;
        for (int64_t ci = 0; ci < c; ++ci) s += base[ci * hw + j];
        obase[j] = s / static_cast<double>(c);
      } else {
        double best = base[j];
        int64_t bi = 0;
        for (int64_t ci = 1; ci < c; ++ci) {
          const double v = base[ci * hw + j];
          if (v > best) {
            best = v;
            bi = ci;
          }
        }
        obase[j] = best;
        (*argmax)[static_cast<size_t>(ni * hw + j)] = bi;
      }
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("channel_reduce", {x}, out, [x, out, kind, argmax, n, c, hw]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t ni = 0; ni < n; ++ni) {
        double* base = gx + ni * c * hw;
        const double* gbase = go + ni * hw;
        for (int64_t j = 0; j < hw; ++j) {
          if (kind == ReduceKind::mean) {
            const double g = gbase[j] / static_cast<double>(c);
            for (int64_t ci = 0; ci < c; ++ci) base[ci * hw + j] += g;
          } else {
            base[(*argmax)[static_cast<size_t>(ni * hw + j)] * hw + j] += gbase[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ValueError("softmax axis out of range");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  const int64_t len = s[static_cast<size_t>(axis)];
  for (int i = axis + 1; i < rank; ++i) inner *= s[static_cast<size_t>(i)];

  Tensor out = Tensor::zeros(s);
  double* op = out.mutable_data();
  const double* xp = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * len * inner + i;
      double m = xp[base];
      for (int64_t j = 1; j < len; ++j) m = std::max(m, xp[base + j * inner]);
      double sum = 0.0;
      for (int64_t j = 0; j < len; ++j) {
        const double e = std::exp(xp[base + j * inner] - m);
        op[base + j * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t j = 0; j < len; ++j) op[base + j * inner] *= inv;
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("softmax", {x}, out, [x, out, outer, inner, len]() {
      const double* go = grad_ptr(out);
      const double* y = out.data();
      double* gx = grad_ptr(x);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (int64_t j = 0; j < len; ++j) dot += go[base + j * inner] * y[base + j * inner];
          for (int64_t j = 0; j < len; ++j) {
            gx[base + j * inner] += y[base + j * inner] * (go[base + j * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor unfold(const Tensor& x, int64_t k, int64_t stride, int64_t padding) {
  require_rank(x, 4, "unfold");
  if (k < 1) throw ValueError("unfold kernel must be >= 1");
  if (stride < 1) throw ValueError("unfold stride must be >= 1");
  if (padding < 0) throw ValueError("unfold padding must be >= 0");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("unfold kernel exceeds padded input extent");
  }
  const int64_t ho = (h + 2 * padding - k) / stride + 1;
  const int64_t wo = (w + 2 * padding - k) / stride + 1;
  const int64_t l = ho * wo;
  const int64_t kk = k * k;
  Tensor out = Tensor::zeros({n, c * kk, l});
  double* op = out.mutable_data();
  const double* xp = x.data();
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* xplane = xp + (ni * c + ci) * h * w;
      for (int64_t kh = 0; kh < k; ++kh) {
        int64_t y0, y1;
        valid_range(h, ho, stride, padding, kh, &y0, &y1);
        for (int64_t kw = 0; kw < k; ++kw) {
          double* orow = op + ((ni * c + ci) * kk + kh * k + kw) * l;
          int64_t x0, x1;
          valid_range(w, wo, stride, padding, kw, &x0, &x1);
          for (int64_t y = y0; y < y1; ++y) {
            const double* xrow = xplane + (y * stride - padding + kh) * w - padding + kw;
            double* odst = orow + y * wo;
            for (int64_t ox = x0; ox < x1; ++ox) odst[ox] = xrow[ox * stride];
          }
        }
      }
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("unfold", {x}, out,
                            [x, out, n, c, h, w, ho, wo, l, k, kk, stride, padding]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t ci = 0; ci < c; ++ci) {
          double* xplane = gx + (ni * c + ci) * h * w;
          for (int64_t kh = 0; kh < k; ++kh) {
            int64_t y0, y1;
            valid_range(h, ho, stride, padding, kh, &y0, &y1);
            for (int64_t kw = 0; kw < k; ++kw) {
              const double* grow = go + ((ni * c + ci) * kk + kh * k + kw) * l;
              int64_t x0, x1;
              valid_range(w, wo, stride, padding, kw, &x0, &x1);
              for (int64_t y = y0; y < y1; ++y) {
                double* xrow = xplane + (y * stride - padding + kh) * w - padding + kw;
                const double* gsrc = grow + y * wo;
                for (int64_t ox = x0; ox < x1; ++ox) xrow[ox * stride] += gsrc[ox];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                 bool train, Tensor& running_mean, Tensor& running_var, double momentum) {
  require_rank(x, 4, "batchnorm");
  if (eps <= 0.0) throw ValueError("batchnorm eps must be > 0");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int64_t m = n * h * w;
  const int64_t hw = h * w;
  auto check_c = [&](const Tensor& t, const char* name) {
    if (t.rank() != 1 || t.extent(0) != c) {
      throw ShapeError(std::string("batchnorm ") + name + " must have shape {" +
                       std::to_string(c) + "}");
    }
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");

  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  const double* xp = x.data();
  if (train) {
    double* rm = running_mean.mutable_data();
    double* rv = running_var.mutable_data();
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t ni = 0; ni < n; ++ni) {
        const double* plane = xp + (ni * c + ci) * hw;
        for (int64_t j = 0; j < hw; ++j) s += plane[j];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t ni = 0; ni < n; ++ni) {
        const double* plane = xp + (ni * c + ci) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const double d = plane[j] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(m);
      (*mean)[static_cast<size_t>(ci)] = mu;
      (*inv)[static_cast<size_t>(ci)] = 1.0 / std::sqrt(var + eps);
      rm[ci] = (1.0 - momentum) * rm[ci] + momentum * mu;
      rv[ci] = (1.0 - momentum) * rv[ci] + momentum * var;
    }
  } else {
    const double* rm = running_mean.data();
    const double* rv = running_var.data();
    for (int64_t ci = 0; ci < c; ++ci) {
      (*mean)[static_cast<size_t>(ci)] = rm[ci];
      (*inv)[static_cast<size_t>(ci)] = 1.0 / std::sqrt(rv[ci] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  double* op = out.mutable_data();
  const double* gp = gamma.data();
  const double* bp = beta.data();
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double mu = (*mean)[static_cast<size_t>(ci)];
      const double iv = (*inv)[static_cast<size_t>(ci)];
      const double gv = gp[ci], bv = bp[ci];
      const double* xplane = xp + (ni * c + ci) * hw;
      double* oplane = op + (ni * c + ci) * hw;
      for (int64_t j = 0; j < hw; ++j) oplane[j] = gv * ((xplane[j] - mu) * iv) + bv;
    }
  }
  if (tracing({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tape::current()->record("batchnorm", {x, gamma, beta}, out,
                            [x, gamma, beta, out, mean, inv, train, n, c, hw, m]() {
      const double* go = grad_ptr(out);
      const double* xp2 = x.data();
      const double* gp2 = gamma.data();
      for (int64_t ci = 0; ci < c; ++ci) {
        const double mu = (*mean)[static_cast<size_t>(ci)];
        const double iv = (*inv)[static_cast<size_t>(ci)];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t ni = 0; ni < n; ++ni) {
          const double* gplane = go + (ni * c + ci) * hw;
          const double* xplane = xp2 + (ni * c + ci) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            s1 += gplane[j];
            s2 += gplane[j] * ((xplane[j] - mu) * iv);
          }
        }
        if (gamma.requires_grad()) grad_ptr(gamma)[ci] += s2;
        if (beta.requires_grad()) grad_ptr(beta)[ci] += s1;
        if (x.requires_grad()) {
          double* gx = grad_ptr(x);
          const double coef = gp2[ci] * iv;
          const double mean_g = s1 / static_cast<double>(m);
          const double mean_gx = s2 / static_cast<double>(m);
          for (int64_t ni = 0; ni < n; ++ni) {
            double* dplane = gx + (ni * c + ci) * hw;
            const double* gplane = go + (ni * c + ci) * hw;
            const double* xplane = xp2 + (ni * c + ci) * hw;
            if (train) {
              for (int64_t j = 0; j < hw; ++j) {
                const double xhat = (xplane[j] - mu) * iv;
                dplane[j] += coef * (gplane[j] - mean_g - xhat * mean_gx);
              }
            } else {
              for (int64_t j = 0; j < hw; ++j) dplane[j] += coef * gplane[j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor layernorm_channel(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "layernorm");
  if (eps <= 0.0) throw ValueError("layernorm eps must be > 0");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int64_t hw = h * w;
  auto check_c = [&](const Tensor& t, const char* name) {
    if (t.rank() != 1 || t.extent(0) != c) {
      throw ShapeError(std::string("layernorm ") + name + " must have shape {" +
                       std::to_string(c) + "}");
    }
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");

  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(n * hw));
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(n * hw));
  Tensor out = Tensor::zeros(x.shape());
  double* op = out.mutable_data();
  const double* xp = x.data();
  const double* gp = gamma.data();
  const double* bp = beta.data();
  for (int64_t ni = 0; ni < n; ++ni) {
    const double* base = xp + ni * c * hw;
    double* obase = op + ni * c * hw;
    for (int64_t j = 0; j < hw; ++j) {
      double s = 0.0;
      for (int64_t ci = 0; ci < c; ++ci) s += base[ci * hw + j];
      const double mu = s / static_cast<double>(c);
      double v = 0.0;
      for (int64_t ci = 0; ci < c; ++ci) {
        const double d = base[ci * hw + j] - mu;
        v += d * d;
      }
      const double iv = 1.0 / std::sqrt(v / static_cast<double>(c) + eps);
      (*mean)[static_cast<size_t>(ni * hw + j)] = mu;
      (*inv)[static_cast<size_t>(ni * hw + j)] = iv;
      for (int64_t ci = 0; ci < c; ++ci) {
        obase[ci * hw + j] = gp[ci] * ((base[ci * hw + j] - mu) * iv) + bp[ci];
      }
    }
  }
  if (tracing({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tape::current()->record("layernorm", {x, gamma, beta}, out,
                            [x, gamma, beta, out, mean, inv, n, c, hw]() {
      const double* go = grad_ptr(out);
      const double* xp2 = x.data();
      const double* gp2 = gamma.data();
      for (int64_t ni = 0; ni < n; ++ni) {
        const double* base = xp2 + ni * c * hw;
        const double* gbase = go + ni * c * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const double mu = (*mean)[static_cast<size_t>(ni * hw + j)];
          const double iv = (*inv)[static_cast<size_t>(ni * hw + j)];
          double s1 = 0.0, s2 = 0.0;
          for (int64_t ci = 0; ci < c; ++ci) {
            const double xhat = (base[ci * hw + j] - mu) * iv;
            const double dxhat = gbase[ci * hw + j] * gp2[ci];
            s1 += dxhat;
            s2 += dxhat * xhat;
          }
          if (x.requires_grad()) {
            double* gx = grad_ptr(x) + ni * c * hw;
            for (int64_t ci = 0; ci < c; ++ci) {
              const double xhat = (base[ci * hw + j] - mu) * iv;
              const double dxhat = gbase[ci * hw + j] * gp2[ci];
              gx[ci * hw + j] += iv * (dxhat - s1 / static_cast<double>(c) -
                                       xhat * s2 / static_cast<double>(c));
            }
          }
          if (gamma.requires_grad() || beta.requires_grad()) {
            for (int64_t ci = 0; ci < c; ++ci) {
              const double xhat = (base[ci * hw + j] - mu) * iv;
              if (gamma.requires_grad()) grad_ptr(gamma)[ci] += gbase[ci * hw + j] * xhat;
              if (beta.requires_grad()) grad_ptr(beta)[ci] += gbase[ci * hw + j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor normalize(NormKind kind, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps, bool train, Tensor* running_mean, Tensor* running_var,
                 double momentum) {
  if (kind == NormKind::layer) return layernorm_channel(x, gamma, beta, eps);
  if (!running_mean || !running_var) {
    throw ValueError("batch normalization requires running statistics");
  }
  return batchnorm(x, gamma, beta, eps, train, *running_mean, *running_var, momentum);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  Tensor out(shape, x.to_vector());
  if (tracing({&x})) {
    out.set_requires_grad(true);
    const int64_t n = x.numel();
    Tape::current()->record("reshape", {x}, out, [x, out, n]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("transpose perm rank mismatch");
  std::vector<bool> used(static_cast<size_t>(rank), false);
  for (int p : perm) {
    if (p < 0 || p >= rank || used[static_cast<size_t>(p)]) {
      throw ValueError("transpose perm is not a permutation");
    }
    used[static_cast<size_t>(p)] = true;
  }
  const Shape& s = x.shape();
  Shape out_shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) out_shape[static_cast<size_t>(i)] = s[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  const std::vector<int64_t> in_strides = row_major_strides(s);
  std::vector<int64_t> gather_stride(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    gather_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  const int64_t n = x.numel();
  Tensor out = Tensor::zeros(out_shape);
  double* op = out.mutable_data();
  const double* xp = x.data();
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t src = 0;
  for (int64_t i = 0; i < n; ++i) {
    op[i] = xp[src];
    for (int ax = rank - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      src += gather_stride[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
      src -= gather_stride[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("transpose", {x}, out, [x, out, out_shape, gather_stride, n, rank]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      std::vector<int64_t> idx2(static_cast<size_t>(rank), 0);
      int64_t src = 0;
      for (int64_t i = 0; i < n; ++i) {
        gx[src] += go[i];
        for (int ax = rank - 1; ax >= 0; --ax) {
          idx2[static_cast<size_t>(ax)]++;
          src += gather_stride[static_cast<size_t>(ax)];
          if (idx2[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
          src -= gather_stride[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
          idx2[static_cast<size_t>(ax)] = 0;
        }
      }
    });
  }
  return out;
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index,
              const Shape& out_shape) {
  if (!index) throw ValueError("gather index is null");
  const int64_t n = shape_numel(out_shape);
  if (n != static_cast<int64_t>(index->size())) {
    throw ShapeError("gather index size does not match output shape");
  }
  const int64_t xn = x.numel();
  Tensor out = Tensor::zeros(out_shape);
  double* op = out.mutable_data();
  const double* xp = x.data();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t src = (*index)[static_cast<size_t>(i)];
    if (src >= xn) throw ValueError("gather index out of range");
    op[i] = src < 0 ? 0.0 : xp[src];
  }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("gather", {x}, out, [x, out, index, n]() {
      const double* go = grad_ptr(out);
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t src = (*index)[static_cast<size_t>(i)];
        if (src >= 0) gx[src] += go[i];
      }
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const int rank = a.rank();
  if (b.rank() != rank) throw ShapeError("concat rank mismatch");
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ValueError("concat axis out of range");
  Shape out_shape = a.shape();
  for (int i = 0; i < rank; ++i) {
    if (i == axis) continue;
    if (a.shape()[static_cast<size_t>(i)] != b.shape()[static_cast<size_t>(i)]) {
      throw ShapeError("concat extents differ off-axis: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  out_shape[static_cast<size_t>(axis)] += b.shape()[static_cast<size_t>(axis)];

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= a.shape()[static_cast<size_t>(i)];
  const int64_t la = a.shape()[static_cast<size_t>(axis)] * inner;
  const int64_t lb = b.shape()[static_cast<size_t>(axis)] * inner;

  Tensor out = Tensor::zeros(out_shape);
  double* op = out.mutable_data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(pa + o * la, pa + (o + 1) * la, op + o * (la + lb));
    std::copy(pb + o * lb, pb + (o + 1) * lb, op + o * (la + lb) + la);
  }
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record("concat", {a, b}, out, [a, b, out, outer, la, lb]() {
      const double* go = grad_ptr(out);
      if (a.requires_grad()) {
        double* ga = grad_ptr(a);
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < la; ++i) ga[o * la + i] += go[o * (la + lb) + i];
        }
      }
      if (b.requires_grad()) {
        double* gb = grad_ptr(b);
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < lb; ++i) gb[o * lb + i] += go[o * (la + lb) + la + i];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  const int64_t n = x.numel();
  const double* p = x.data();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += p[i];
  Tensor out = Tensor::scalar(s);
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("sum_all", {x}, out, [x, out, n]() {
      const double g = grad_ptr(out)[0];
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const int64_t n = x.numel();
  const double* p = x.data();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += p[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (tracing({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record("mean_all", {x}, out, [x, out, n]() {
      const double g = grad_ptr(out)[0] / static_cast<double>(n);
      double* gx = grad_ptr(x);
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const int64_t n = logits.extent(0), k = logits.extent(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy label count does not match batch");
  }
  for (int64_t y : labels) {
    if (y < 0 || y >= k) throw ValueError("cross_entropy label out of range");
  }
  const double* lp = logits.data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = lp + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - m);
      (*probs)[static_cast<size_t>(i * k + j)] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < k; ++j) (*probs)[static_cast<size_t>(i * k + j)] *= inv;
    total += m + std::log(sum) - row[labels[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  if (tracing({&logits})) {
    out.set_requires_grad(true);
    auto labels_copy = std::make_shared<std::vector<int64_t>>(labels);
    Tape::current()->record("cross_entropy", {logits}, out,
                            [logits, out, probs, labels_copy, n, k]() {
      const double g = grad_ptr(out)[0] / static_cast<double>(n);
      double* gl = grad_ptr(logits);
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          const double ind = (j == (*labels_copy)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          gl[i * k + j] += g * ((*probs)[static_cast<size_t>(i * k + j)] - ind);
        }
      }
    });
  }
  return out;
}

}  // namespace ae::ops
