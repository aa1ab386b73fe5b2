#pragma once

#include <cstddef>
#include <vector>

#include "vitens/tensor.hpp"

// Differentiable primitives. Every function records itself on the tape of its
// inputs (if any) and rejects non-finite results.
//
// Broadcasting (add/sub/mul/div): shapes are aligned at the trailing
// dimension; a dimension of size 1, or a missing leading dimension, expands to
// the other operand's size. Anything else is a ShapeError.
namespace vitens::ops {

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);
/// ELU(x) + 1: x + 1 for x > 0, exp(x) otherwise. Strictly positive.
Tensor elu_plus_one(const Tensor& x);

/// (M,K)x(K,N), (B,M,K)x(B,K,N) or (B,M,K)x(K,N). The transpose flags swap the
/// last two axes of the corresponding operand before multiplying.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

/// Reductions. Negative axes count from the end.
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Maximum along one axis. The gradient goes to the first maximal element.
Tensor max(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// x(B,K) -> (B) with out[b] = x[b, index[b]].
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index);

/// 1 where a > b elementwise (with broadcasting), else 0. Not differentiable;
/// the result is never recorded.
Tensor greater(const Tensor& a, const Tensor& b);

/// Softmax over the last axis with max subtraction.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Normalizes over the last axis; gamma and beta have the size of that axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

struct BatchNormOutput {
    Tensor y;
    std::vector<double> batch_mean;
    /// Unbiased per-channel variance of the batch (empty in inference mode).
    std::vector<double> batch_var;
};

/// Per-channel normalization of a (B,C,H,W) tensor. In training mode the batch
/// statistics are used; otherwise `running_mean`/`running_var`.
BatchNormOutput batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const Tensor& running_mean, const Tensor& running_var, double eps,
                           bool training);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

/// Cross-correlation of x(B,C,H,W) with weight(OC, C/groups, KH, KW) plus an
/// optional bias(OC). Pass an empty tensor for no bias.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options);

/// x(B,C,H,W) -> (B, N, P*P*C), N = (H/P)*(W/P). Patches are ordered row-major
/// over the patch grid; inside a patch the column is (row*P + col)*C + channel.
Tensor unfold(const Tensor& x, std::size_t patch);
/// Inverse of `unfold` for a (B,C,H,W) target.
Tensor fold(const Tensor& z, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t patch);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace vitens::ops
