#include "vitens/nn.hpp"

#include <cmath>

#include "vitens/ops.hpp"

namespace vitens::nn {

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::None: return x;
        case Activation::Relu: return ops::relu(x);
        case Activation::Silu: return ops::silu(x);
        case Activation::Gelu: return ops::gelu(x);
    }
    return x;
}

Tensor conv2d(const Tensor& x, const ConvLayer& layer) {
    return ops::conv2d(x, layer.weight, layer.bias, {layer.stride, layer.padding, layer.groups});
}

Tensor normalize(const Tensor& x, const NormLayer& norm, ForwardContext& ctx) {
    if (norm.kind == NormKind::LayerNorm) return ops::layer_norm(x, norm.gamma, norm.beta, norm.eps);
    auto out = ops::batch_norm(x, norm.gamma, norm.beta, norm.running_mean, norm.running_var, norm.eps, ctx.training);
    if (ctx.training && !norm.stats_key.empty()) {
        ctx.stat_updates.push_back({norm.stats_key, norm.momentum, std::move(out.batch_mean), std::move(out.batch_var)});
    }
    return out.y;
}

Tensor apply(const Tensor& x, const ConvNormAct& layer, ForwardContext& ctx) {
    Tensor y = conv2d(x, layer.conv);
    if (layer.norm) y = normalize(y, *layer.norm, ctx);
    return activate(y, layer.act);
}

Tensor linear(const Tensor& x, const LinearLayer& layer) {
    if (layer.weight.dim() != 2) throw ShapeError("linear: weight must be (in,out), got " + shape_str(layer.weight.shape()));
    const std::size_t in = layer.weight.shape()[0];
    const std::size_t out = layer.weight.shape()[1];
    if (x.shape().back() != in) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(layer.weight.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor flat = x.dim() == 2 ? x : ops::reshape(x, {x.numel() / in, in});
    Tensor y = ops::matmul(flat, layer.weight);
    if (!layer.bias.empty()) y = ops::add(y, layer.bias);
    return x.dim() == 2 ? y : ops::reshape(y, out_shape);
}

namespace {

// Returns (B,N,d) view of tokens plus whether the input was 2-d.
std::pair<Tensor, bool> as_batched(const Tensor& z) {
    if (z.dim() == 2) return {ops::reshape(z, {1, z.shape()[0], z.shape()[1]}), true};
    if (z.dim() != 3) throw ShapeError("attention expects (B,N,d) or (N,d) tokens, got " + shape_str(z.shape()));
    return {z, false};
}

Tensor restore(const Tensor& y, bool was_2d) {
    return was_2d ? ops::reshape(y, {y.shape()[1], y.shape()[2]}) : y;
}

Tensor split_heads(const Tensor& t, std::size_t heads) {
    const std::size_t b = t.shape()[0], n = t.shape()[1], d = t.shape()[2];
    if (heads == 1) return t;
    Tensor r = ops::reshape(t, {b, n, heads, d / heads});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {b * heads, n, d / heads});
}

Tensor merge_heads(const Tensor& t, std::size_t batch, std::size_t heads) {
    if (heads == 1) return t;
    const std::size_t n = t.shape()[1], dh = t.shape()[2];
    Tensor r = ops::reshape(t, {batch, heads, n, dh});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {batch, n, heads * dh});
}

}  // namespace

Tensor multi_head_attention(const Tensor& z, const AttentionParams& params, AttentionProbe* probe) {
    auto [tokens, was_2d] = as_batched(z);
    const std::size_t d = params.query.weight.shape()[1];
    if (params.heads == 0 || d % params.heads != 0) {
        throw ShapeError("attention dimension " + std::to_string(d) + " is not divisible by " +
                         std::to_string(params.heads) + " heads");
    }
    const std::size_t batch = tokens.shape()[0];
    const std::size_t dh = d / params.heads;
    Tensor q = split_heads(linear(tokens, params.query), params.heads);
    Tensor k = split_heads(linear(tokens, params.key), params.heads);
    Tensor v = split_heads(linear(tokens, params.value), params.heads);

    Tensor scores = ops::scale(ops::matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor weights = ops::softmax(scores);
    if (probe) probe->weights.push_back(weights.detach());
    Tensor context = merge_heads(ops::matmul(weights, v), batch, params.heads);
    return restore(linear(context, params.output), was_2d);
}

Tensor linear_attention(const Tensor& z, const AttentionParams& params) {
    auto [tokens, was_2d] = as_batched(z);
    Tensor q = ops::elu_plus_one(linear(tokens, params.query));
    Tensor k = ops::elu_plus_one(linear(tokens, params.key));
    Tensor v = linear(tokens, params.value);
    Tensor kv = ops::matmul(k, v, true, false);  // (B, d, d)
    Tensor attended = ops::matmul(q, kv);
    return restore(linear(attended, params.output), was_2d);
}

Tensor feed_forward(const Tensor& z, const FeedForward& ffn) {
    return linear(activate(linear(z, ffn.fc1), ffn.act), ffn.fc2);
}

Tensor encoder_layer(const Tensor& z, const EncoderLayerParams& params, AttentionKind kind, EncoderStyle style,
                     ForwardContext& ctx) {
    auto attend = [&](const Tensor& t) {
        return kind == AttentionKind::Softmax ? multi_head_attention(t, params.attention, ctx.probe)
                                              : linear_attention(t, params.attention);
    };
    if (style == EncoderStyle::Paper) {
        Tensor h = attend(normalize(z, params.norm1, ctx));
        return ops::add(feed_forward(h, params.ffn), z);
    }
    Tensor y = ops::add(z, attend(normalize(z, params.norm1, ctx)));
    return ops::add(y, feed_forward(normalize(y, params.norm2, ctx), params.ffn));
}

Tensor unfold(const Tensor& x, std::size_t patch) { return ops::unfold(x, patch); }

Tensor fold(const Tensor& z, std::size_t channels, std::size_t height, std::size_t width, std::size_t patch) {
    return ops::fold(z, channels, height, width, patch);
}

Tensor mobilevit_block(const Tensor& x, const MobileViTBlockParams& params, ForwardContext& ctx,
                       Tensor* fusion_out) {
    if (x.dim() != 4) throw ShapeError("mobilevit_block expects (B,C,H,W), got " + shape_str(x.shape()));
    if (params.encoder.empty()) throw std::invalid_argument("mobilevit_block needs at least one encoder layer");
    const std::size_t h = x.shape()[2], w = x.shape()[3];
    if (params.patch == 0 || h % params.patch != 0 || w % params.patch != 0) {
        throw ShapeError("mobilevit_block: patch size " + std::to_string(params.patch) + " does not divide " +
                         shape_str(x.shape()));
    }
    Tensor local = apply(apply(x, params.local_conv, ctx), params.local_project, ctx);
    const std::size_t c_local = local.shape()[1];
    Tensor z = unfold(local, params.patch);
    for (const auto& layer : params.encoder) z = encoder_layer(z, layer, AttentionKind::Softmax, params.style, ctx);
    Tensor global = fold(z, c_local, h, w, params.patch);
    if (params.fusion_concat_input) global = ops::concat({x, global}, 1);
    Tensor y = apply(global, params.fusion, ctx);
    if (fusion_out) *fusion_out = y;
    return y;
}

Tensor inverted_residual_block(const Tensor& x, const InvertedResidualParams& params, ForwardContext& ctx) {
    if (x.dim() != 4) throw ShapeError("inverted_residual_block expects (B,C,H,W), got " + shape_str(x.shape()));
    if (params.expand.conv.in_channels() != x.shape()[1] || params.project.conv.out_channels() != x.shape()[1]) {
        throw ShapeError("inverted_residual_block: branch channels " +
                         std::to_string(params.expand.conv.in_channels()) + "->" +
                         std::to_string(params.project.conv.out_channels()) + " do not match input " +
                         shape_str(x.shape()));
    }
    Tensor branch = apply(x, params.expand, ctx);
    branch = apply(branch, params.depthwise, ctx);
    branch = apply(branch, params.project, ctx);
    if (branch.shape() != x.shape()) {
        throw ShapeError("inverted_residual_block: branch output " + shape_str(branch.shape()) +
                         " differs from input " + shape_str(x.shape()));
    }
    return ops::add(x, branch);
}

Tensor mobilevit_v2_block(const Tensor& x, const MobileViTv2BlockParams& params, ForwardContext& ctx,
                          Tensor* fusion_out) {
    if (params.encoder.empty()) throw std::invalid_argument("mobilevit_v2_block needs at least one encoder layer");
    Tensor x_irb = inverted_residual_block(x, params.irb, ctx);
    const std::size_t c = x_irb.shape()[1], h = x_irb.shape()[2], w = x_irb.shape()[3];
    if (params.patch == 0 || h % params.patch != 0 || w % params.patch != 0) {
        throw ShapeError("mobilevit_v2_block: patch size " + std::to_string(params.patch) + " does not divide " +
                         shape_str(x.shape()));
    }
    Tensor z = unfold(x_irb, params.patch);
    for (const auto& layer : params.encoder) z = encoder_layer(z, layer, AttentionKind::Linear, params.style, ctx);
    Tensor projected = conv2d(fold(z, c, h, w, params.patch), params.fusion);
    if (fusion_out) *fusion_out = projected;
    return ops::add(projected, x_irb);
}

}  // namespace vitens::nn
