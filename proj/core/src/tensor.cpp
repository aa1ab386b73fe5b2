#include "vitens/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vitens {

namespace detail {

struct TapeNode {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> parents;
    std::vector<bool> parent_recorded;
    std::size_t numel = 0;
    BackwardFn backward;
};

struct TapeState {
    std::vector<TapeNode> nodes;
};

}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Neg: return "neg";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::MatMul: return "matmul";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Silu: return "silu";
        case OpKind::Gelu: return "gelu";
        case OpKind::EluPlusOne: return "elu_plus_one";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Max: return "max";
        case OpKind::Reshape: return "reshape";
        case OpKind::Permute: return "permute";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::BroadcastTo: return "broadcast_to";
        case OpKind::Gather: return "gather";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::BatchNorm: return "batch_norm";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Unfold: return "unfold";
        case OpKind::Fold: return "fold";
    }
    return "unknown";
}

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    if (data_->size() != shape_numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_->size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, std::vector<double>(shape_numel(shape), fill)) {}

Tensor Tensor::eye(std::size_t n) {
    Tensor t({n, n}, 0.0);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::size(int axis) const {
    const int rank = static_cast<int>(shape_.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
}

std::span<const double> Tensor::data() const { return {data_->data(), data_->size()}; }

std::span<double> Tensor::mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    return {data_->data(), data_->size()};
}

const std::vector<double>& Tensor::values() const { return *data_; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_str(shape_));
    return (*data_)[0];
}

std::optional<NodeId> Tensor::node_id() const {
    if (!tape_) return std::nullopt;
    return node_;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

Tensor record_result(OpKind kind, std::initializer_list<const Tensor*> inputs, Tensor result,
                     BackwardFn backward) {
    for (double v : *result.data_) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite result in op '" + std::string(op_name(kind)) + "'");
        }
    }
    std::shared_ptr<detail::TapeState> tape;
    for (const Tensor* in : inputs) {
        if (!in->tape_) continue;
        if (tape && tape != in->tape_) throw std::logic_error("inputs recorded on different tapes");
        tape = in->tape_;
    }
    if (!tape) return result;

    detail::TapeNode node;
    node.kind = kind;
    node.numel = result.numel();
    node.backward = std::move(backward);
    for (const Tensor* in : inputs) {
        node.parents.push_back(in->tape_ ? in->node_ : 0);
        node.parent_recorded.push_back(static_cast<bool>(in->tape_));
    }
    tape->nodes.push_back(std::move(node));
    result.tape_ = tape;
    result.node_ = tape->nodes.size() - 1;
    return result;
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tensor Tape::watch(const Tensor& t) {
    detail::TapeNode node;
    node.kind = OpKind::Leaf;
    node.numel = t.numel();
    state_->nodes.push_back(std::move(node));
    Tensor out = t.detach();
    out.tape_ = state_;
    out.node_ = state_->nodes.size() - 1;
    return out;
}

Tensor Tape::constant(const Tensor& t) {
    detail::TapeNode node;
    node.kind = OpKind::Constant;
    node.numel = t.numel();
    state_->nodes.push_back(std::move(node));
    Tensor out = t.detach();
    out.tape_ = state_;
    out.node_ = state_->nodes.size() - 1;
    return out;
}

std::size_t Tape::size() const { return state_->nodes.size(); }

bool GradientMap::contains(const Tensor& t) const {
    if (!t.on_tape() || t.tape_state() != tape_) return false;
    return grads_.count(*t.node_id()) > 0;
}

std::vector<double> GradientMap::of(const Tensor& t) const {
    if (contains(t)) return grads_.at(*t.node_id());
    return std::vector<double>(t.numel(), 0.0);
}

GradientMap backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw ShapeError("backward needs a scalar root, got shape " + shape_str(root.shape()));
    }
    if (!root.on_tape()) throw std::invalid_argument("backward root is not recorded on a tape");

    const auto& tape = root.tape_state();
    const NodeId root_id = *root.node_id();
    std::vector<std::vector<double>> grads(root_id + 1);
    grads[root_id] = {1.0};

    std::vector<std::span<double>> spans;
    for (NodeId i = root_id + 1; i-- > 0;) {
        if (grads[i].empty()) continue;
        auto& node = tape->nodes[i];
        if (!node.backward || node.parents.empty()) continue;
        spans.clear();
        for (std::size_t p = 0; p < node.parents.size(); ++p) {
            if (!node.parent_recorded[p]) {
                spans.emplace_back();
                continue;
            }
            auto& g = grads[node.parents[p]];
            if (g.empty()) g.assign(tape->nodes[node.parents[p]].numel, 0.0);
            spans.emplace_back(g.data(), g.size());
        }
        node.backward(grads[i], spans);
    }

    std::unordered_map<NodeId, std::vector<double>> out;
    for (NodeId i = 0; i < root_id; ++i) {
        if (!grads[i].empty()) out.emplace(i, std::move(grads[i]));
    }
    return GradientMap(tape, std::move(out));
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check step must be positive");

    Tape tape;
    Tensor x = tape.watch(point);
    Tensor y = f(x);
    const auto analytic = backward(y).of(x);

    auto probe = [&](const Tensor& p) {
        const double v = f(p).item();
        if (!std::isfinite(v)) throw NumericError("grad_check: function is non-finite at a probe point");
        return v;
    };

    double worst = 0.0;
    Tensor shifted = point.detach();
    for (std::size_t i = 0; i < point.numel(); ++i) {
        const double original = point[i];
        shifted.mutable_data()[i] = original + step;
        const double up = probe(shifted);
        shifted.mutable_data()[i] = original - step;
        const double down = probe(shifted);
        shifted.mutable_data()[i] = original;
        const double central = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[i] - central) /
                           (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace vitens
