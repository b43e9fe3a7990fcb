#pragma once

#include <memory>
#include <vector>

#include "ae/tensor.hpp"

namespace ae::ops {

// Binary ops broadcast with the numpy rule: shapes are right-aligned and an
// extent of 1 stretches. Anything else is a ShapeError.

enum class EwKind { add, mul, relu, sigmoid, gelu };

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b = nullptr);
Tensor scale(const Tensor& x, double s);

// matmul accepts (m,k)x(k,n), batched (B...,m,k)x(B...,k,n) with identical
// batch extents, or a batched left operand against a shared rank-2 right
// operand. Accumulation runs over k in ascending order for every output
// element.
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation over NCHW input with OIHW weights. For every output
// element the reduction runs (in-channel, kh, kw) in ascending order, then
// bias. H' = (H + 2*padding - kh) / stride + 1 and likewise for W'.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int64_t stride,
              int64_t padding, int64_t groups);

enum class PoolKind { avg, max };

// Square-window pooling. Padding cells are ignored: max takes the valid
// maximum, avg still divides by window*window. Max pooling resolves ties to
// the first maximum in (kh, kw) scan order.
Tensor pool(PoolKind kind, const Tensor& x, int64_t window, int64_t stride,
            int64_t padding = 0);
Tensor global_pool(PoolKind kind, const Tensor& x);  // NCHW -> N,C,1,1

enum class ReduceKind { mean, max };
Tensor channel_reduce(ReduceKind kind, const Tensor& x);  // NCHW -> N,1,H,W

// Numerically stable softmax: subtracts the lane maximum before exp.
Tensor softmax(const Tensor& x, int axis);

// im2col. Output is N x (C*k*k) x L with L = H'*W'; rows are channel-major,
// i.e. row c*k*k + kh*k + kw holds input channel c at kernel offset (kh, kw).
// Out-of-bounds taps read as zero.
Tensor unfold(const Tensor& x, int64_t k, int64_t stride, int64_t padding);

enum class NormKind { batch, layer };

// Batch norm over NCHW, normalizing each channel across (N, H, W) with biased
// variance. Train mode uses batch statistics and folds them into the running
// buffers in place; eval mode reads the running buffers.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                 bool train, Tensor& running_mean, Tensor& running_var, double momentum);

// Layer norm over the channel axis, one mean/variance per (n, h, w) position.
Tensor layernorm_channel(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor normalize(NormKind kind, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps, bool train, Tensor* running_mean, Tensor* running_var,
                 double momentum);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);

// out[i] = x[index[i]], with -1 reading as 0. Backward scatter-adds in
// ascending output order.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index,
              const Shape& out_shape);

Tensor concat(const Tensor& a, const Tensor& b, int axis);

Tensor sum_all(const Tensor& x);   // shape {1}
Tensor mean_all(const Tensor& x);  // shape {1}

// Mean cross-entropy of row-wise logits against integer labels, computed via
// a stable log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

}  // namespace ae::ops
