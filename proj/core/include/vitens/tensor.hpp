#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vitens {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddScalar,
    MatMul,
    Exp,
    Log,
    Sqrt,
    Relu,
    Sigmoid,
    Silu,
    Gelu,
    EluPlusOne,
    Sum,
    Mean,
    Max,
    Reshape,
    Permute,
    Concat,
    Slice,
    BroadcastTo,
    Gather,
    Softmax,
    LogSoftmax,
    LayerNorm,
    BatchNorm,
    Conv2d,
    Unfold,
    Fold,
};

std::string_view op_name(OpKind kind);

namespace detail {
struct TapeState;
}

class Tape;
class Tensor;

/// Backward rule: receives the gradient of the op's output and one span per
/// input. A span is empty when that input is not recorded.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::span<double>> input_grads)>;

/// Dense row-major array of doubles. Copies share storage; `mutable_data`
/// detaches before writing, so a Tensor behaves as a value.
///
/// A tensor produced by an op on a recorded input carries a handle to the
/// tape that recorded it. Gradients flow through those handles only.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);
    explicit Tensor(Shape shape, double fill = 0.0);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(double value) { return Tensor(Shape{1}, value); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }
    static Tensor eye(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t dim() const { return shape_.size(); }
    std::size_t size(int axis) const;
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool empty() const { return numel() == 0; }

    std::span<const double> data() const;
    std::span<double> mutable_data();
    const std::vector<double>& values() const;
    double item() const;
    double operator[](std::size_t i) const { return (*data_)[i]; }

    bool on_tape() const { return static_cast<bool>(tape_); }
    std::optional<NodeId> node_id() const;
    /// Same values, no graph membership.
    Tensor detach() const;

    const std::shared_ptr<const std::vector<double>> storage() const { return data_; }
    const std::shared_ptr<detail::TapeState>& tape_state() const { return tape_; }

private:
    friend class Tape;
    friend Tensor record_result(OpKind, std::initializer_list<const Tensor*>, Tensor, BackwardFn);

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<detail::TapeState> tape_;
    NodeId node_ = 0;
};

/// Attaches `result` to the tape shared by `inputs` (if any) and checks that
/// it is finite. Used by every primitive.
Tensor record_result(OpKind kind, std::initializer_list<const Tensor*> inputs, Tensor result,
                     BackwardFn backward);

/// A single forward pass's recording. Nodes are appended in creation order,
/// so parents always precede children.
class Tape {
public:
    Tape();

    /// Registers `t` as a differentiable leaf.
    Tensor watch(const Tensor& t);
    /// Registers `t` as a node with no parents and no gradient.
    Tensor constant(const Tensor& t);

    std::size_t size() const;
    const std::shared_ptr<detail::TapeState>& state() const { return state_; }

private:
    std::shared_ptr<detail::TapeState> state_;
};

/// Gradients of one backward pass, keyed by node id on a single tape.
class GradientMap {
public:
    GradientMap() = default;
    GradientMap(std::shared_ptr<detail::TapeState> tape,
                std::unordered_map<NodeId, std::vector<double>> grads)
        : tape_(std::move(tape)), grads_(std::move(grads)) {}

    bool empty() const { return grads_.empty(); }
    std::size_t size() const { return grads_.size(); }
    bool contains(const Tensor& t) const;
    /// Gradient for `t`, or zeros when `t` is unreachable from the root.
    std::vector<double> of(const Tensor& t) const;
    Tensor tensor_of(const Tensor& t) const { return Tensor(t.shape(), of(t)); }
    const std::unordered_map<NodeId, std::vector<double>>& raw() const { return grads_; }

private:
    std::shared_ptr<detail::TapeState> tape_;
    std::unordered_map<NodeId, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a one-element root. Every ancestor of the root
/// appears in the result; the root itself does not.
GradientMap backward(const Tensor& root);

/// Maximum over coordinates of |analytic - central difference| /
/// (|analytic| + |central| + 1e-12).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double step = 1e-4);

}  // namespace vitens
