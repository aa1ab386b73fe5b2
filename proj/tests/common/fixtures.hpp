#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vitens/nn.hpp"
#include "vitens/ops.hpp"
#include "vitens/rng.hpp"

namespace vitens::fixtures {

inline Tensor uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape, 0.0);
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

/// Uniform with |v| in [lo, hi] and a random sign; keeps kinks out of reach.
inline Tensor away_from_zero(const Shape& shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
    Tensor t(shape, 0.0);
    for (double& v : t.mutable_data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
    return t;
}

/// sum(t * R) for fixed random R.
inline Tensor project(const Tensor& t, std::uint64_t seed = 99) {
    Rng rng(seed);
    return ops::sum_all(ops::mul(t, uniform(t.shape(), rng)));
}

inline nn::ConvLayer conv(std::size_t oc, std::size_t ic, std::size_t k, Rng& rng, std::size_t stride = 1,
                          std::size_t padding = 0, std::size_t groups = 1, bool bias = true) {
    const double s = 1.0 / std::sqrt(static_cast<double>(ic / groups * k * k));
    nn::ConvLayer layer;
    layer.weight = uniform({oc, ic / groups, k, k}, rng, -s, s);
    layer.bias = bias ? uniform({oc}, rng, -0.1, 0.1) : Tensor();
    layer.stride = stride;
    layer.padding = padding;
    layer.groups = groups;
    return layer;
}

inline nn::NormLayer batch_norm(std::size_t c, Rng& rng, const std::string& key = "bn") {
    nn::NormLayer n;
    n.kind = nn::NormKind::BatchNorm;
    n.gamma = uniform({c}, rng, 0.5, 1.5);
    n.beta = uniform({c}, rng, -0.2, 0.2);
    n.running_mean = uniform({c}, rng, -0.2, 0.2);
    n.running_var = uniform({c}, rng, 0.5, 1.5);
    n.stats_key = key;
    return n;
}

inline nn::NormLayer layer_norm(std::size_t d, Rng& rng) {
    nn::NormLayer n;
    n.kind = nn::NormKind::LayerNorm;
    n.gamma = uniform({d}, rng, 0.5, 1.5);
    n.beta = uniform({d}, rng, -0.2, 0.2);
    return n;
}

inline nn::ConvNormAct conv_norm_act(std::size_t oc, std::size_t ic, std::size_t k, Rng& rng,
                                     nn::Activation act = nn::Activation::Silu, std::size_t groups = 1) {
    return {conv(oc, ic, k, rng, 1, k / 2, groups, false), batch_norm(oc, rng), act};
}

inline nn::LinearLayer linear(std::size_t in, std::size_t out, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    return {uniform({in, out}, rng, -s, s), uniform({out}, rng, -0.1, 0.1)};
}

inline nn::AttentionParams attention(std::size_t d_in, std::size_t d, std::size_t heads, Rng& rng) {
    nn::AttentionParams p;
    p.query = linear(d_in, d, rng);
    p.key = linear(d_in, d, rng);
    p.value = linear(d_in, d, rng);
    p.output = linear(d, d_in, rng);
    p.heads = heads;
    return p;
}

inline nn::FeedForward feed_forward(std::size_t d_in, std::size_t hidden, Rng& rng) {
    return {linear(d_in, hidden, rng), linear(hidden, d_in, rng), nn::Activation::Gelu};
}

inline nn::EncoderLayerParams encoder(std::size_t d_in, std::size_t d, std::size_t heads, Rng& rng) {
    return {layer_norm(d_in, rng), attention(d_in, d, heads, rng), layer_norm(d_in, rng),
            feed_forward(d_in, 2 * d_in, rng)};
}

inline nn::MobileViTBlockParams mobilevit(std::size_t c, std::size_t c_local, std::size_t c_out, std::size_t patch,
                                          std::size_t depth, Rng& rng, bool concat = false,
                                          nn::EncoderStyle style = nn::EncoderStyle::Paper) {
    nn::MobileViTBlockParams p;
    p.local_conv = conv_norm_act(c, c, 3, rng);
    p.local_project = conv_norm_act(c_local, c, 1, rng, nn::Activation::None);
    p.patch = patch;
    for (std::size_t l = 0; l < depth; ++l) p.encoder.push_back(encoder(patch * patch * c_local, 8, 2, rng));
    p.fusion = conv_norm_act(c_out, concat ? c_local + c : c_local, 3, rng);
    p.style = style;
    p.fusion_concat_input = concat;
    return p;
}

inline nn::InvertedResidualParams inverted_residual(std::size_t c, std::size_t expansion, Rng& rng) {
    const std::size_t e = c * expansion;
    return {conv_norm_act(e, c, 1, rng), conv_norm_act(e, e, 3, rng, nn::Activation::Silu, e),
            conv_norm_act(c, e, 1, rng, nn::Activation::None)};
}

inline nn::MobileViTv2BlockParams mobilevit_v2(std::size_t c, std::size_t patch, std::size_t depth, Rng& rng,
                                               nn::EncoderStyle style = nn::EncoderStyle::Paper) {
    nn::MobileViTv2BlockParams p;
    p.irb = inverted_residual(c, 2, rng);
    p.patch = patch;
    for (std::size_t l = 0; l < depth; ++l) p.encoder.push_back(encoder(patch * patch * c, 8, 1, rng));
    p.fusion = conv(c, c, 1, rng);
    p.style = style;
    return p;
}

/// One gradient-check target: a scalar function and a point generator.
struct GradCase {
    std::string name;
    std::function<Tensor(const Tensor&)> f;
    std::function<Tensor(Rng&)> point;
};

/// Every differentiable primitive (w.r.t. each input) and every nn composite.
inline std::vector<GradCase> grad_cases() {
    std::vector<GradCase> cases;
    auto add = [&](std::string name, std::function<Tensor(const Tensor&)> f, std::function<Tensor(Rng&)> point) {
        cases.push_back({std::move(name), std::move(f), std::move(point)});
    };
    auto box = [](Shape s, double lo = -1.0, double hi = 1.0) {
        return [s, lo, hi](Rng& r) { return uniform(s, r, lo, hi); };
    };
    auto away = [](Shape s) { return [s](Rng& r) { return away_from_zero(s, r); }; };

    Rng prng(2024);
    const Tensor other = uniform({3, 4}, prng);
    const Tensor row = uniform({4}, prng);
    const Tensor col = uniform({3, 1}, prng);
    const Tensor denom = away_from_zero({3, 4}, prng, 0.5, 1.5);

    add("add_lhs", [=](const Tensor& x) { return project(ops::add(x, other)); }, box({3, 4}));
    add("add_broadcast_rhs", [=](const Tensor& x) { return project(ops::add(other, x)); }, box({4}));
    add("sub_lhs", [=](const Tensor& x) { return project(ops::sub(x, row)); }, box({3, 4}));
    add("sub_rhs", [=](const Tensor& x) { return project(ops::sub(other, x)); }, box({3, 1}));
    add("mul_lhs", [=](const Tensor& x) { return project(ops::mul(x, other)); }, box({3, 4}));
    add("mul_broadcast", [=](const Tensor& x) { return project(ops::mul(col, x)); }, box({4}));
    add("div_numerator", [=](const Tensor& x) { return project(ops::div(x, denom)); }, box({3, 4}));
    add("div_denominator", [=](const Tensor& x) { return project(ops::div(other, x)); },
        [](Rng& r) { return away_from_zero({3, 4}, r, 0.5, 1.5); });
    add("neg", [](const Tensor& x) { return project(ops::neg(x)); }, box({5}));
    add("scale", [](const Tensor& x) { return project(ops::scale(x, -2.5)); }, box({5}));
    add("add_scalar", [](const Tensor& x) { return project(ops::add_scalar(x, 3.0)); }, box({5}));
    add("exp", [](const Tensor& x) { return project(ops::exp(x)); }, box({6}));
    add("log", [](const Tensor& x) { return project(ops::log(x)); }, box({6}, 0.2, 2.0));
    add("sqrt", [](const Tensor& x) { return project(ops::sqrt(x)); }, box({6}, 0.2, 2.0));
    add("relu", [](const Tensor& x) { return project(ops::relu(x)); }, away({6}));
    add("sigmoid", [](const Tensor& x) { return project(ops::sigmoid(x)); }, box({6}, -3, 3));
    add("silu", [](const Tensor& x) { return project(ops::silu(x)); }, box({6}, -3, 3));
    add("gelu", [](const Tensor& x) { return project(ops::gelu(x)); }, box({6}, -3, 3));
    add("elu_plus_one", [](const Tensor& x) { return project(ops::elu_plus_one(x)); }, away({6}));

    const Tensor mb = uniform({4, 5}, prng);
    const Tensor ma = uniform({3, 4}, prng);
    const Tensor batched_b = uniform({2, 4, 5}, prng);
    const Tensor batched_a = uniform({2, 3, 4}, prng);
    add("matmul_lhs", [=](const Tensor& x) { return project(ops::matmul(x, mb)); }, box({3, 4}));
    add("matmul_rhs", [=](const Tensor& x) { return project(ops::matmul(ma, x)); }, box({4, 5}));
    add("matmul_transpose_a", [=](const Tensor& x) { return project(ops::matmul(x, mb, true, false)); }, box({4, 3}));
    add("matmul_transpose_b", [=](const Tensor& x) { return project(ops::matmul(ma, x, false, true)); }, box({5, 4}));
    add("matmul_batched_lhs", [=](const Tensor& x) { return project(ops::matmul(x, batched_b)); }, box({2, 3, 4}));
    add("matmul_batched_rhs",
        [=](const Tensor& x) { return project(ops::matmul(batched_a, x)); },
        box({2, 4, 5}));
    add("matmul_batched_shared_rhs", [=](const Tensor& x) { return project(ops::matmul(batched_a, x)); },
        box({4, 5}));

    add("sum_axis", [](const Tensor& x) { return project(ops::sum(x, {1})); }, box({3, 4, 2}));
    add("sum_keepdim", [](const Tensor& x) { return project(ops::sum(x, {0, 2}, true)); }, box({3, 4, 2}));
    add("mean_axes", [](const Tensor& x) { return project(ops::mean(x, {-1, -2})); }, box({2, 3, 4}));
    add("sum_all", [](const Tensor& x) { return ops::sum_all(ops::mul(x, x)); }, box({7}));
    add("mean_all", [](const Tensor& x) { return ops::mean_all(ops::mul(x, x)); }, box({7}));
    add("max", [](const Tensor& x) { return project(ops::max(x, 1)); }, box({3, 5}));
    add("reshape", [](const Tensor& x) { return project(ops::reshape(x, {4, 3})); }, box({2, 6}));
    add("permute", [](const Tensor& x) { return project(ops::permute(x, {2, 0, 1})); }, box({2, 3, 4}));
    add("transpose", [](const Tensor& x) { return project(ops::transpose(x)); }, box({2, 3, 4}));
    add("concat", [=](const Tensor& x) { return project(ops::concat({x, other, x}, 0)); }, box({2, 4}));
    add("slice", [](const Tensor& x) { return project(ops::slice(x, 1, 1, 3)); }, box({3, 4}));
    add("broadcast_to", [](const Tensor& x) { return project(ops::broadcast_to(x, {3, 2, 4})); }, box({2, 1}));
    add("gather_rows", [](const Tensor& x) { return project(ops::gather_rows(x, {2, 0, 2})); }, box({3, 4}));
    add("softmax", [](const Tensor& x) { return project(ops::softmax(x)); }, box({3, 5}, -2, 2));
    add("log_softmax", [](const Tensor& x) { return project(ops::log_softmax(x)); }, box({3, 5}, -2, 2));

    const Tensor gamma = uniform({5}, prng, 0.5, 1.5), beta = uniform({5}, prng);
    add("layer_norm_input", [=](const Tensor& x) { return project(ops::layer_norm(x, gamma, beta, 1e-5)); },
        box({3, 5}));
    const Tensor ln_x = uniform({3, 5}, prng);
    add("layer_norm_gamma", [=](const Tensor& g) { return project(ops::layer_norm(ln_x, g, beta, 1e-5)); },
        box({5}, 0.5, 1.5));
    add("layer_norm_beta", [=](const Tensor& b) { return project(ops::layer_norm(ln_x, gamma, b, 1e-5)); },
        box({5}));

    const Tensor bg = uniform({3}, prng, 0.5, 1.5), bb = uniform({3}, prng), rm = uniform({3}, prng, -0.2, 0.2),
                 rv = uniform({3}, prng, 0.5, 1.5);
    add("batch_norm_train_input",
        [=](const Tensor& x) { return project(ops::batch_norm(x, bg, bb, rm, rv, 1e-5, true).y); }, box({2, 3, 2, 2}));
    add("batch_norm_eval_input",
        [=](const Tensor& x) { return project(ops::batch_norm(x, bg, bb, rm, rv, 1e-5, false).y); }, box({2, 3, 2, 2}));
    const Tensor bn_x = uniform({2, 3, 2, 2}, prng);
    add("batch_norm_train_gamma",
        [=](const Tensor& g) { return project(ops::batch_norm(bn_x, g, bb, rm, rv, 1e-5, true).y); },
        box({3}, 0.5, 1.5));
    add("batch_norm_train_beta",
        [=](const Tensor& b) { return project(ops::batch_norm(bn_x, bg, b, rm, rv, 1e-5, true).y); }, box({3}));

    const Tensor cw = uniform({4, 2, 3, 3}, prng, -0.5, 0.5), cb = uniform({4}, prng);
    const Tensor dw = uniform({4, 1, 3, 3}, prng, -0.5, 0.5);
    const Tensor cx = uniform({2, 2, 5, 5}, prng);
    const Tensor dx = uniform({1, 4, 4, 4}, prng);
    add("conv2d_input", [=](const Tensor& x) { return project(ops::conv2d(x, cw, cb, {1, 1, 1})); },
        box({2, 2, 5, 5}));
    add("conv2d_strided_input", [=](const Tensor& x) { return project(ops::conv2d(x, cw, cb, {2, 1, 1})); },
        box({1, 2, 6, 6}));
    add("conv2d_weight", [=](const Tensor& w) { return project(ops::conv2d(cx, w, cb, {2, 0, 1})); },
        box({4, 2, 3, 3}, -0.5, 0.5));
    add("conv2d_bias", [=](const Tensor& b) { return project(ops::conv2d(cx, cw, b, {1, 1, 1})); }, box({4}));
    add("conv2d_depthwise_input",
        [=](const Tensor& x) { return project(ops::conv2d(x, dw, Tensor(), {1, 1, 4})); }, box({1, 4, 4, 4}));
    add("conv2d_depthwise_weight",
        [=](const Tensor& w) { return project(ops::conv2d(dx, w, Tensor(), {1, 1, 4})); },
        box({4, 1, 3, 3}, -0.5, 0.5));
    add("unfold", [](const Tensor& x) { return project(ops::unfold(x, 2)); }, box({2, 3, 4, 4}));
    add("fold", [](const Tensor& z) { return project(ops::fold(z, 3, 4, 4, 2)); }, box({2, 4, 12}));

    // nn composites.
    Rng nrng(77);
    const auto cna = conv_norm_act(4, 3, 3, nrng);
    add("nn_activate_silu", [](const Tensor& x) { return project(nn::activate(x, nn::Activation::Silu)); },
        box({6}, -3, 3));
    add("nn_conv_norm_act", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::apply(x, cna, ctx));
    }, box({2, 3, 4, 4}));
    add("nn_conv_norm_act_training", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        ctx.training = true;
        return project(nn::apply(x, cna, ctx));
    }, box({2, 3, 4, 4}));
    const auto ln = layer_norm(6, nrng);
    add("nn_layer_norm", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::normalize(x, ln, ctx));
    }, box({2, 3, 6}));
    const auto lin = linear(6, 4, nrng);
    add("nn_linear", [=](const Tensor& x) { return project(nn::linear(x, lin)); }, box({2, 3, 6}));
    const auto att = attention(6, 8, 2, nrng);
    const Tensor tokens = uniform({2, 5, 6}, nrng);
    add("nn_mhsa", [=](const Tensor& z) { return project(nn::multi_head_attention(z, att)); }, box({2, 5, 6}));
    add("nn_mhsa_query_weight", [=](const Tensor& w) {
        auto p = att;
        p.query.weight = w;
        return project(nn::multi_head_attention(tokens, p));
    }, box({6, 8}, -0.4, 0.4));
    add("nn_linear_attention", [=](const Tensor& z) { return project(nn::linear_attention(z, att)); },
        box({2, 5, 6}));
    add("nn_linear_attention_key_weight", [=](const Tensor& w) {
        auto p = att;
        p.key.weight = w;
        return project(nn::linear_attention(tokens, p));
    }, box({6, 8}, -0.4, 0.4));
    const auto ffn = feed_forward(6, 12, nrng);
    add("nn_feed_forward", [=](const Tensor& z) { return project(nn::feed_forward(z, ffn)); }, box({2, 5, 6}));
    const auto enc = encoder(6, 8, 2, nrng);
    for (auto kind : {nn::AttentionKind::Softmax, nn::AttentionKind::Linear}) {
        for (auto style : {nn::EncoderStyle::Paper, nn::EncoderStyle::Conventional}) {
            std::string name = std::string("nn_encoder_") + (kind == nn::AttentionKind::Softmax ? "mhsa" : "linear") +
                               (style == nn::EncoderStyle::Paper ? "_paper" : "_conventional");
            add(name, [=](const Tensor& z) {
                nn::ForwardContext ctx;
                return project(nn::encoder_layer(z, enc, kind, style, ctx));
            }, box({2, 5, 6}));
        }
    }
    add("nn_unfold", [](const Tensor& x) { return project(nn::unfold(x, 2)); }, box({1, 2, 4, 4}));
    add("nn_fold", [](const Tensor& z) { return project(nn::fold(z, 2, 4, 4, 2)); }, box({1, 4, 8}));
    const auto irb = inverted_residual(3, 2, nrng);
    add("nn_inverted_residual", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::inverted_residual_block(x, irb, ctx));
    }, box({1, 3, 4, 4}));
    const auto mvit = mobilevit(3, 4, 5, 2, 2, nrng);
    add("nn_mobilevit_block", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::mobilevit_block(x, mvit, ctx));
    }, box({1, 3, 4, 4}));
    const auto mvit_cat = mobilevit(3, 4, 5, 2, 1, nrng, true, nn::EncoderStyle::Conventional);
    add("nn_mobilevit_block_concat_conventional", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::mobilevit_block(x, mvit_cat, ctx));
    }, box({1, 3, 4, 4}));
    add("nn_mobilevit_block_training", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        ctx.training = true;
        return project(nn::mobilevit_block(x, mvit, ctx));
    }, box({2, 3, 4, 4}));
    const auto v2 = mobilevit_v2(3, 2, 2, nrng);
    add("nn_mobilevit_v2_block", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        return project(nn::mobilevit_v2_block(x, v2, ctx));
    }, box({1, 3, 4, 4}));
    add("nn_mobilevit_v2_block_training", [=](const Tensor& x) {
        nn::ForwardContext ctx;
        ctx.training = true;
        return project(nn::mobilevit_v2_block(x, v2, ctx));
    }, box({2, 3, 4, 4}));
    return cases;
}

}  // namespace vitens::fixtures
