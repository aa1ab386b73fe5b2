#include "vitens/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace vitens::ops {

namespace {

using Storage = std::shared_ptr<const std::vector<double>>;
using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;
using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t normalize_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(axis);
}

std::string pair_str(const Tensor& a, const Tensor& b) {
    return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

// Offset into `in` for every element of `out` when `in` is broadcast to `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
    const std::size_t rank = out.size();
    const std::size_t lead = rank - in.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
        stride[d + lead] = (in[d] == 1 && out[d + lead] != 1) ? 0 : s;
        s *= in[d];
    }
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> offsets(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        offsets[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            off += stride[d];
            if (counter[d] < out[d]) break;
            off -= stride[d] * out[d];
            counter[d] = 0;
        }
    }
    return offsets;
}

template <class Forward, class GradA, class GradB>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, Forward f, GradA ga, GradB gb) {
    Shape out_shape;
    try {
        out_shape = broadcast_shape(a.shape(), b.shape());
    } catch (const ShapeError&) {
        throw ShapeError(std::string(op_name(kind)) + ": cannot broadcast " + pair_str(a, b));
    }
    const std::size_t n = shape_numel(out_shape);
    Storage sa = a.storage(), sb = b.storage();
    IndexMap ia, ib;
    if (a.shape() != out_shape) ia = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(a.shape(), out_shape));
    if (b.shape() != out_shape) ib = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(b.shape(), out_shape));

    std::vector<double> out(n);
    const double* pa = sa->data();
    const double* pb = sb->data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(pa[ia ? (*ia)[i] : i], pb[ib ? (*ib)[i] : i]);
    }
    return record_result(kind, {&a, &b}, Tensor(out_shape, std::move(out)),
                         [sa, sb, ia, ib, n, ga, gb](std::span<const double> g, std::span<std::span<double>> grads) {
                             const double* pa = sa->data();
                             const double* pb = sb->data();
                             for (std::size_t i = 0; i < n; ++i) {
                                 const std::size_t ja = ia ? (*ia)[i] : i;
                                 const std::size_t jb = ib ? (*ib)[i] : i;
                                 if (!grads[0].empty()) grads[0][ja] += ga(g[i], pa[ja], pb[jb]);
                                 if (!grads[1].empty()) grads[1][jb] += gb(g[i], pa[ja], pb[jb]);
                             }
                         });
}

// Elementwise op whose derivative is expressed through input x and output y.
template <class Forward, class Derivative>
Tensor unary(OpKind kind, const Tensor& x, Forward f, Derivative df) {
    Storage sx = x.storage();
    const std::size_t n = x.numel();
    auto out = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) (*out)[i] = f((*sx)[i]);
    Storage sy = out;
    return record_result(kind, {&x}, Tensor(x.shape(), *out),
                         [sx, sy, n, df](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < n; ++i) grads[0][i] += g[i] * df((*sx)[i], (*sy)[i]);
                         });
}

// C (+)= op(A) * op(B) where op is an optional transpose of the stored matrix.
void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b, std::size_t br,
          std::size_t bc, bool tb, double* c, bool accumulate) {
    Eigen::Map<const MatR> A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    Eigen::Map<const MatR> B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    const Eigen::Index m = static_cast<Eigen::Index>(ta ? ac : ar);
    const Eigen::Index nn = static_cast<Eigen::Index>(tb ? br : bc);
    Eigen::Map<MatR> C(c, m, nn);
    if (!accumulate) C.setZero();
    if (!ta && !tb) C.noalias() += A * B;
    else if (ta && !tb) C.noalias() += A.transpose() * B;
    else if (!ta && tb) C.noalias() += A * B.transpose();
    else C.noalias() += A.transpose() * B.transpose();
}

struct ReducePlan {
    Shape out_shape;
    std::vector<std::size_t> out_index;  // per input element
    std::size_t out_numel = 1;
    std::size_t group = 1;               // inputs per output element
};

ReducePlan plan_reduce(const Shape& in, const std::vector<int>& axes, bool keepdim) {
    const std::size_t rank = in.size();
    std::vector<bool> reduced(rank, false);
    for (int a : axes) reduced[normalize_axis(a, rank)] = true;

    ReducePlan plan;
    Shape kept(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        kept[d] = reduced[d] ? 1 : in[d];
        if (reduced[d]) plan.group *= in[d];
        if (!reduced[d] || keepdim) plan.out_shape.push_back(kept[d]);
    }
    if (plan.out_shape.empty()) plan.out_shape.push_back(1);
    plan.out_numel = shape_numel(kept);

    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
        stride[d] = reduced[d] ? 0 : s;
        s *= kept[d];
    }
    const std::size_t n = shape_numel(in);
    plan.out_index.resize(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        plan.out_index[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            off += stride[d];
            if (counter[d] < in[d]) break;
            off -= stride[d] * in[d];
            counter[d] = 0;
        }
    }
    return plan;
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
    s.extent = shape[axis];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

// Gathers im2col columns of one group of one image.
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = cols + ((c * kh + ky) * kw + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w);
                        row[oy * wo + ox] = inside ? x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* dx) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double* row = cols + ((c * kh + ky) * kw + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        dx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_str(a) + " and " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        OpKind::Add, a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        OpKind::Sub, a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        OpKind::Mul, a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        OpKind::Div, a, b, [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor neg(const Tensor& x) {
    return unary(OpKind::Neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(OpKind::Scale, x, [factor](double v) { return v * factor; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(OpKind::AddScalar, x, [value](double v) { return v + value; },
                 [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(OpKind::Exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(OpKind::Log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(OpKind::Sqrt, x, [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& x) {
    return unary(OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(OpKind::Sigmoid, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
    return unary(
        OpKind::Silu, x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        OpKind::Gelu, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor elu_plus_one(const Tensor& x) {
    return unary(OpKind::EluPlusOne, x, [](double v) { return v > 0.0 ? v + 1.0 : std::exp(v); },
                 [](double v, double y) { return v > 0.0 ? 1.0 : y; });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() < 2 || as.size() > 3 || bs.size() < 2 || bs.size() > 3 || (as.size() == 2 && bs.size() == 3)) {
        throw ShapeError("matmul: unsupported ranks " + pair_str(a, b));
    }
    const std::size_t batch = as.size() == 3 ? as[0] : 1;
    const bool shared_b = bs.size() == 2;
    if (!shared_b && bs[0] != batch) throw ShapeError("matmul: batch mismatch " + pair_str(a, b));

    const std::size_t ar = as[as.size() - 2], ac = as[as.size() - 1];
    const std::size_t br = bs[bs.size() - 2], bc = bs[bs.size() - 1];
    const std::size_t m = transpose_a ? ac : ar;
    const std::size_t k = transpose_a ? ar : ac;
    const std::size_t kb = transpose_b ? bc : br;
    const std::size_t n = transpose_b ? br : bc;
    if (k != kb) throw ShapeError("matmul: inner dimensions differ for " + pair_str(a, b));

    Shape out_shape = as.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
    std::vector<double> out(batch * m * n);
    Storage sa = a.storage(), sb = b.storage();
    for (std::size_t i = 0; i < batch; ++i) {
        gemm(sa->data() + i * ar * ac, ar, ac, transpose_a, sb->data() + (shared_b ? 0 : i * br * bc), br, bc,
             transpose_b, out.data() + i * m * n, false);
    }
    return record_result(
        OpKind::MatMul, {&a, &b}, Tensor(out_shape, std::move(out)),
        [=](std::span<const double> g, std::span<std::span<double>> grads) {
            for (std::size_t i = 0; i < batch; ++i) {
                const double* gi = g.data() + i * m * n;
                const double* ai = sa->data() + i * ar * ac;
                const double* bi = sb->data() + (shared_b ? 0 : i * br * bc);
                if (!grads[0].empty()) {
                    double* da = grads[0].data() + i * ar * ac;
                    if (!transpose_a) gemm(gi, m, n, false, bi, br, bc, !transpose_b, da, true);
                    else gemm(bi, br, bc, transpose_b, gi, m, n, true, da, true);
                }
                if (!grads[1].empty()) {
                    double* db = grads[1].data() + (shared_b ? 0 : i * br * bc);
                    if (!transpose_b) gemm(ai, ar, ac, !transpose_a, gi, m, n, false, db, true);
                    else gemm(gi, m, n, true, ai, ar, ac, transpose_a, db, true);
                }
            }
        });
}

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
    auto plan = std::make_shared<ReducePlan>(plan_reduce(x.shape(), axes, keepdim));
    std::vector<double> out(plan->out_numel, 0.0);
    const auto xs = x.data();
    for (std::size_t i = 0; i < xs.size(); ++i) out[plan->out_index[i]] += xs[i];
    return record_result(OpKind::Sum, {&x}, Tensor(plan->out_shape, std::move(out)),
                         [plan](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += g[plan->out_index[i]];
                         });
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
    auto plan = std::make_shared<ReducePlan>(plan_reduce(x.shape(), axes, keepdim));
    std::vector<double> out(plan->out_numel, 0.0);
    const auto xs = x.data();
    for (std::size_t i = 0; i < xs.size(); ++i) out[plan->out_index[i]] += xs[i];
    const double inv = 1.0 / static_cast<double>(plan->group);
    for (auto& v : out) v *= inv;
    return record_result(OpKind::Mean, {&x}, Tensor(plan->out_shape, std::move(out)),
                         [plan, inv](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += g[plan->out_index[i]] * inv;
                         });
}

Tensor sum_all(const Tensor& x) {
    std::vector<int> axes(x.dim());
    std::iota(axes.begin(), axes.end(), 0);
    return sum(x, axes, false);
}

Tensor mean_all(const Tensor& x) {
    std::vector<int> axes(x.dim());
    std::iota(axes.begin(), axes.end(), 0);
    return mean(x, axes, false);
}

Tensor max(const Tensor& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.dim());
    const AxisSplit s = split_axis(x.shape(), ax);
    Shape out_shape;
    for (std::size_t d = 0; d < x.dim(); ++d) {
        if (d != ax) out_shape.push_back(x.shape()[d]);
        else if (keepdim) out_shape.push_back(1);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    const auto xs = x.data();
    std::vector<double> out(s.outer * s.inner);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = o * s.extent * s.inner + i;
            for (std::size_t e = 1; e < s.extent; ++e) {
                const std::size_t j = (o * s.extent + e) * s.inner + i;
                if (xs[j] > xs[best]) best = j;
            }
            out[o * s.inner + i] = xs[best];
            (*argmax)[o * s.inner + i] = best;
        }
    }
    return record_result(OpKind::Max, {&x}, Tensor(out_shape, std::move(out)),
                         [argmax](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < argmax->size(); ++i) grads[0][(*argmax)[i]] += g[i];
                         });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out(std::move(shape), x.values());
    return record_result(OpKind::Reshape, {&x}, std::move(out),
                         [](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                         });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const std::size_t rank = x.dim();
    if (order.size() != rank) throw ShapeError("permute: order rank differs from " + shape_str(x.shape()));
    std::vector<bool> seen(rank, false);
    for (auto o : order) {
        if (o >= rank || seen[o]) throw ShapeError("permute: invalid axis order for " + shape_str(x.shape()));
        seen[o] = true;
    }
    std::vector<std::size_t> in_stride(rank);
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
        in_stride[d] = s;
        s *= x.shape()[d];
    }
    Shape out_shape(rank);
    std::vector<std::size_t> stride(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = x.shape()[order[d]];
        stride[d] = in_stride[order[d]];
    }
    const std::size_t n = x.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*src)[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            off += stride[d];
            if (counter[d] < out_shape[d]) break;
            off -= stride[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    const auto xs = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xs[(*src)[i]];
    return record_result(OpKind::Permute, {&x}, Tensor(out_shape, std::move(out)),
                         [src](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) grads[0][(*src)[i]] += g[i];
                         });
}

Tensor transpose(const Tensor& x) {
    if (x.dim() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> order(x.dim());
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[x.dim() - 1], order[x.dim() - 2]);
    return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t ax = normalize_axis(axis, parts[0].dim());
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.dim() != parts[0].dim()) throw ShapeError("concat: rank mismatch " + pair_str(parts[0], p));
        for (std::size_t d = 0; d < p.dim(); ++d) {
            if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
                throw ShapeError("concat: shape mismatch " + pair_str(parts[0], p));
            }
        }
        out_shape[ax] += p.shape()[ax];
    }
    // Tapes record a fixed arity, so concat is chained pairwise.
    if (parts.size() == 1) {
        return record_result(OpKind::Concat, {&parts[0]}, parts[0].detach(),
                             [](std::span<const double> g, std::span<std::span<double>> grads) {
                                 for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                             });
    }
    Tensor left = parts[0];
    std::size_t left_extent = parts[0].shape()[ax];
    for (std::size_t pi = 1; pi < parts.size(); ++pi) {
        const Tensor& right = parts[pi];
        Shape merged = out_shape;
        merged[ax] = left_extent + right.shape()[ax];
        const AxisSplit ls = split_axis(left.shape(), ax);
        const AxisSplit rs = split_axis(right.shape(), ax);
        const AxisSplit ms = split_axis(merged, ax);
        std::vector<double> buf(shape_numel(merged));
        const auto lv = left.data();
        const auto rv = right.data();
        for (std::size_t o = 0; o < ms.outer; ++o) {
            std::copy_n(lv.data() + o * ls.extent * ls.inner, ls.extent * ls.inner, buf.data() + o * ms.extent * ms.inner);
            std::copy_n(rv.data() + o * rs.extent * rs.inner, rs.extent * rs.inner,
                        buf.data() + (o * ms.extent + ls.extent) * ms.inner);
        }
        left = record_result(OpKind::Concat, {&left, &right}, Tensor(merged, std::move(buf)),
                             [ls, rs, ms](std::span<const double> g, std::span<std::span<double>> grads) {
                                 for (std::size_t o = 0; o < ms.outer; ++o) {
                                     const double* src = g.data() + o * ms.extent * ms.inner;
                                     if (!grads[0].empty()) {
                                         double* dst = grads[0].data() + o * ls.extent * ls.inner;
                                         for (std::size_t i = 0; i < ls.extent * ls.inner; ++i) dst[i] += src[i];
                                     }
                                     if (!grads[1].empty()) {
                                         double* dst = grads[1].data() + o * rs.extent * rs.inner;
                                         const double* s2 = src + ls.extent * ms.inner;
                                         for (std::size_t i = 0; i < rs.extent * rs.inner; ++i) dst[i] += s2[i];
                                     }
                                 }
                             });
        left_extent = merged[ax];
    }
    return left;
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = normalize_axis(axis, x.dim());
    if (begin >= end || end > x.shape()[ax]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
    }
    const AxisSplit s = split_axis(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = end - begin;
    const std::size_t len = end - begin;
    const auto xs = x.data();
    std::vector<double> out(s.outer * len * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xs.data() + (o * s.extent + begin) * s.inner, len * s.inner, out.data() + o * len * s.inner);
    }
    return record_result(OpKind::Slice, {&x}, Tensor(out_shape, std::move(out)),
                         [s, begin, len](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t o = 0; o < s.outer; ++o) {
                                 double* dst = grads[0].data() + (o * s.extent + begin) * s.inner;
                                 const double* src = g.data() + o * len * s.inner;
                                 for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                             }
                         });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    if (broadcast_shape(x.shape(), shape) != shape) {
        throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto src = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(x.shape(), shape));
    const auto xs = x.data();
    std::vector<double> out(src->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[(*src)[i]];
    return record_result(OpKind::BroadcastTo, {&x}, Tensor(shape, std::move(out)),
                         [src](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) grads[0][(*src)[i]] += g[i];
                         });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
    if (x.dim() != 2 || index.size() != x.shape()[0]) {
        throw ShapeError("gather_rows: need (B,K) input with B indices, got " + shape_str(x.shape()) + " and " +
                         std::to_string(index.size()) + " indices");
    }
    const std::size_t k = x.shape()[1];
    for (std::size_t b = 0; b < index.size(); ++b) {
        if (index[b] >= k) {
            throw std::out_of_range("gather_rows: index " + std::to_string(index[b]) + " at row " +
                                    std::to_string(b) + " exceeds " + std::to_string(k) + " columns");
        }
    }
    const auto xs = x.data();
    std::vector<double> out(index.size());
    for (std::size_t b = 0; b < index.size(); ++b) out[b] = xs[b * k + index[b]];
    return record_result(OpKind::Gather, {&x}, Tensor({index.size()}, std::move(out)),
                         [index, k](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t b = 0; b < index.size(); ++b) grads[0][b * k + index[b]] += g[b];
                         });
}

Tensor greater(const Tensor& a, const Tensor& b) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto ia = broadcast_offsets(a.shape(), out_shape);
    const auto ib = broadcast_offsets(b.shape(), out_shape);
    const auto as = a.data();
    const auto bs = b.data();
    std::vector<double> out(ia.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[ia[i]] > bs[ib[i]] ? 1.0 : 0.0;
    return Tensor(out_shape, std::move(out));
}

Tensor softmax(const Tensor& x) {
    const std::size_t k = x.shape().back();
    const std::size_t rows = x.numel() / k;
    const auto xs = x.data();
    auto out = std::make_shared<std::vector<double>>(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xs.data() + r * k;
        double* o = out->data() + r * k;
        const double m = *std::max_element(in, in + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += (o[j] = std::exp(in[j] - m));
        for (std::size_t j = 0; j < k; ++j) o[j] /= z;
    }
    Storage sy = out;
    return record_result(OpKind::Softmax, {&x}, Tensor(x.shape(), *out),
                         [sy, rows, k](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = sy->data() + r * k;
                                 const double* gr = g.data() + r * k;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < k; ++j) dot += gr[j] * y[j];
                                 for (std::size_t j = 0; j < k; ++j) grads[0][r * k + j] += y[j] * (gr[j] - dot);
                             }
                         });
}

Tensor log_softmax(const Tensor& x) {
    const std::size_t k = x.shape().back();
    const std::size_t rows = x.numel() / k;
    const auto xs = x.data();
    std::vector<double> out(x.numel());
    auto probs = std::make_shared<std::vector<double>>(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xs.data() + r * k;
        const double m = *std::max_element(in, in + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(in[j] - m);
        const double lse = m + std::log(z);
        for (std::size_t j = 0; j < k; ++j) {
            out[r * k + j] = in[j] - lse;
            (*probs)[r * k + j] = std::exp(in[j] - lse);
        }
    }
    return record_result(OpKind::LogSoftmax, {&x}, Tensor(x.shape(), std::move(out)),
                         [probs, rows, k](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t r = 0; r < rows; ++r) {
                                 const double* gr = g.data() + r * k;
                                 double total = 0.0;
                                 for (std::size_t j = 0; j < k; ++j) total += gr[j];
                                 for (std::size_t j = 0; j < k; ++j) {
                                     grads[0][r * k + j] += gr[j] - (*probs)[r * k + j] * total;
                                 }
                             }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: gamma/beta " + pair_str(gamma, beta) + " do not match last axis of " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const auto xs = x.data();
    const auto gs = gamma.data();
    const auto bs = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xs.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = gs[j] * h + bs[j];
        }
    }
    Storage sg = gamma.storage();
    return record_result(
        OpKind::LayerNorm, {&x, &gamma, &beta}, Tensor(x.shape(), std::move(out)),
        [xhat, inv_std, sg, rows, d](std::span<const double> g, std::span<std::span<double>> grads) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* h = xhat->data() + r * d;
                if (!grads[1].empty() || !grads[2].empty()) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (!grads[1].empty()) grads[1][j] += gr[j] * h[j];
                        if (!grads[2].empty()) grads[2][j] += gr[j];
                    }
                }
                if (grads[0].empty()) continue;
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = gr[j] * (*sg)[j];
                    mean_dh += dh;
                    mean_dh_h += dh * h[j];
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = gr[j] * (*sg)[j];
                    grads[0][r * d + j] += (*inv_std)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                }
            }
        });
}

BatchNormOutput batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                           const Tensor& running_var, double eps, bool training) {
    if (x.dim() != 4) throw ShapeError("batch_norm expects (B,C,H,W), got " + shape_str(x.shape()));
    const std::size_t b = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    for (const Tensor* p : {&gamma, &beta, &running_mean, &running_var}) {
        if (p->numel() != c) {
            throw ShapeError("batch_norm: parameter " + shape_str(p->shape()) + " does not match channels of " +
                             shape_str(x.shape()));
        }
    }
    const std::size_t count = b * hw;
    const auto xs = x.data();
    BatchNormOutput result;
    std::vector<double> mu(c), var(c);
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t n = 0; n < b; ++n)
                for (std::size_t i = 0; i < hw; ++i) s += xs[(n * c + ch) * hw + i];
            mu[ch] = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t n = 0; n < b; ++n)
                for (std::size_t i = 0; i < hw; ++i) {
                    const double dv = xs[(n * c + ch) * hw + i] - mu[ch];
                    v += dv * dv;
                }
            var[ch] = v / static_cast<double>(count);
        }
        result.batch_mean = mu;
        result.batch_var.resize(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            result.batch_var[ch] = count > 1 ? var[ch] * static_cast<double>(count) / static_cast<double>(count - 1) : var[ch];
        }
    } else {
        std::copy(running_mean.data().begin(), running_mean.data().end(), mu.begin());
        std::copy(running_var.data().begin(), running_var.data().end(), var.begin());
    }

    auto inv_std = std::make_shared<std::vector<double>>(c);
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> out(x.numel());
    const auto gs = gamma.data();
    const auto bs = beta.data();
    for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + eps);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t j = (n * c + ch) * hw + i;
                const double h = (xs[j] - mu[ch]) * (*inv_std)[ch];
                (*xhat)[j] = h;
                out[j] = gs[ch] * h + bs[ch];
            }
        }
    }
    Storage sg = gamma.storage();
    result.y = record_result(
        OpKind::BatchNorm, {&x, &gamma, &beta}, Tensor(x.shape(), std::move(out)),
        [xhat, inv_std, sg, b, c, hw, count, training](std::span<const double> g, std::span<std::span<double>> grads) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (std::size_t n = 0; n < b; ++n) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t j = (n * c + ch) * hw + i;
                        sum_g += g[j];
                        sum_gh += g[j] * (*xhat)[j];
                    }
                }
                if (!grads[1].empty()) grads[1][ch] += sum_gh;
                if (!grads[2].empty()) grads[2][ch] += sum_g;
                if (grads[0].empty()) continue;
                const double gam = (*sg)[ch];
                const double is = (*inv_std)[ch];
                const double mean_g = sum_g / static_cast<double>(count);
                const double mean_gh = sum_gh / static_cast<double>(count);
                for (std::size_t n = 0; n < b; ++n) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t j = (n * c + ch) * hw + i;
                        if (training) grads[0][j] += gam * is * (g[j] - mean_g - (*xhat)[j] * mean_gh);
                        else grads[0][j] += gam * is * g[j];
                    }
                }
            }
        });
    return result;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
    if (x.dim() != 4 || weight.dim() != 4) {
        throw ShapeError("conv2d: expected 4-d input and weight, got " + pair_str(x, weight));
    }
    const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::size_t oc = weight.shape()[0], cg = weight.shape()[1], kh = weight.shape()[2], kw = weight.shape()[3];
    const std::size_t groups = opt.groups;
    if (groups == 0 || opt.stride == 0 || c % groups != 0 || oc % groups != 0 || cg * groups != c) {
        throw ShapeError("conv2d: input channels of " + shape_str(x.shape()) + " do not match weight " +
                         shape_str(weight.shape()) + " with groups=" + std::to_string(groups));
    }
    const bool has_bias = !bias.empty();
    if (has_bias && bias.numel() != oc) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(oc) + " outputs");
    }
    const long span_h = static_cast<long>(h + 2 * opt.padding) - static_cast<long>(kh);
    const long span_w = static_cast<long>(w + 2 * opt.padding) - static_cast<long>(kw);
    if (span_h < 0 || span_w < 0) {
        throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " + shape_str(x.shape()));
    }
    const std::size_t ho = static_cast<std::size_t>(span_h) / opt.stride + 1;
    const std::size_t wo = static_cast<std::size_t>(span_w) / opt.stride + 1;
    const std::size_t ocg = oc / groups;
    const std::size_t kdim = cg * kh * kw;
    const std::size_t plane = ho * wo;

    Storage sx = x.storage(), sw = weight.storage();
    std::vector<double> out(b * oc * plane);
    std::vector<double> cols(kdim * plane);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t g = 0; g < groups; ++g) {
            im2col(sx->data() + (n * c + g * cg) * h * w, cg, h, w, kh, kw, opt.stride, opt.padding, ho, wo, cols.data());
            gemm(sw->data() + g * ocg * kdim, ocg, kdim, false, cols.data(), kdim, plane, false,
                 out.data() + (n * oc + g * ocg) * plane, false);
        }
        if (has_bias) {
            const auto bv = bias.data();
            for (std::size_t o = 0; o < oc; ++o) {
                double* p = out.data() + (n * oc + o) * plane;
                for (std::size_t i = 0; i < plane; ++i) p[i] += bv[o];
            }
        }
    }
    Tensor empty_bias;
    const Tensor& bias_ref = has_bias ? bias : empty_bias;
    return record_result(
        OpKind::Conv2d, {&x, &weight, &bias_ref}, Tensor({b, oc, ho, wo}, std::move(out)),
        [=](std::span<const double> gout, std::span<std::span<double>> grads) {
            std::vector<double> col(kdim * plane);
            std::vector<double> dcol(kdim * plane);
            for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t g = 0; g < groups; ++g) {
                    const double* gy = gout.data() + (n * oc + g * ocg) * plane;
                    if (!grads[1].empty()) {
                        im2col(sx->data() + (n * c + g * cg) * h * w, cg, h, w, kh, kw, opt.stride, opt.padding, ho, wo,
                               col.data());
                        gemm(gy, ocg, plane, false, col.data(), kdim, plane, true, grads[1].data() + g * ocg * kdim, true);
                    }
                    if (!grads[0].empty()) {
                        gemm(sw->data() + g * ocg * kdim, ocg, kdim, true, gy, ocg, plane, false, dcol.data(), false);
                        col2im(dcol.data(), cg, h, w, kh, kw, opt.stride, opt.padding, ho, wo,
                               grads[0].data() + (n * c + g * cg) * h * w);
                    }
                }
                if (!grads[2].empty()) {
                    for (std::size_t o = 0; o < oc; ++o) {
                        const double* gy = gout.data() + (n * oc + o) * plane;
                        double s = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) s += gy[i];
                        grads[2][o] += s;
                    }
                }
            }
        });
}

Tensor unfold(const Tensor& x, std::size_t patch) {
    if (x.dim() != 4) throw ShapeError("unfold expects (B,C,H,W), got " + shape_str(x.shape()));
    const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ShapeError("unfold: patch size " + std::to_string(patch) + " does not divide " + shape_str(x.shape()));
    }
    const std::size_t gh = h / patch, gw = w / patch, n = gh * gw, cols = patch * patch * c;
    auto src = std::make_shared<std::vector<std::size_t>>(b * n * cols);
    std::size_t i = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ph = 0; ph < gh; ++ph)
            for (std::size_t pw = 0; pw < gw; ++pw)
                for (std::size_t py = 0; py < patch; ++py)
                    for (std::size_t px = 0; px < patch; ++px)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            (*src)[i++] = ((bi * c + ch) * h + ph * patch + py) * w + pw * patch + px;
    const auto xs = x.data();
    std::vector<double> out(src->size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = xs[(*src)[j]];
    return record_result(OpKind::Unfold, {&x}, Tensor({b, n, cols}, std::move(out)),
                         [src](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t j = 0; j < g.size(); ++j) grads[0][(*src)[j]] += g[j];
                         });
}

Tensor fold(const Tensor& z, std::size_t channels, std::size_t height, std::size_t width, std::size_t patch) {
    if (z.dim() != 3) throw ShapeError("fold expects (B,N,P*P*C), got " + shape_str(z.shape()));
    const std::size_t b = z.shape()[0], n = z.shape()[1], cols = z.shape()[2];
    if (patch == 0 || height % patch != 0 || width % patch != 0 || n * patch * patch != height * width ||
        cols != patch * patch * channels) {
        throw ShapeError("fold: " + shape_str(z.shape()) + " is inconsistent with C=" + std::to_string(channels) +
                         " H=" + std::to_string(height) + " W=" + std::to_string(width) + " P=" + std::to_string(patch));
    }
    const std::size_t gw = width / patch;
    auto dst = std::make_shared<std::vector<std::size_t>>(z.numel());
    std::size_t i = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t py = 0; py < patch; ++py)
                for (std::size_t px = 0; px < patch; ++px)
                    for (std::size_t ch = 0; ch < channels; ++ch)
                        (*dst)[i++] = ((bi * channels + ch) * height + (p / gw) * patch + py) * width + (p % gw) * patch + px;
    const auto zs = z.data();
    std::vector<double> out(z.numel());
    for (std::size_t j = 0; j < out.size(); ++j) out[(*dst)[j]] = zs[j];
    return record_result(OpKind::Fold, {&z}, Tensor({b, channels, height, width}, std::move(out)),
                         [dst](std::span<const double> g, std::span<std::span<double>> grads) {
                             for (std::size_t j = 0; j < grads[0].size(); ++j) grads[0][j] += g[(*dst)[j]];
                         });
}

}  // namespace vitens::ops
