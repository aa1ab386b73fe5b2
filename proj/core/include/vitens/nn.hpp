#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vitens/tensor.hpp"

namespace vitens::nn {

enum class Activation { None, Relu, Silu, Gelu };

Tensor activate(const Tensor& x, Activation act);

/// Weight is OC x (IC/groups) x KH x KW; bias is OC values or empty.
struct ConvLayer {
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    std::size_t out_channels() const { return weight.shape()[0]; }
    std::size_t in_channels() const { return weight.shape()[1] * groups; }
    bool depthwise() const { return groups > 1 && groups == in_channels() && groups == out_channels(); }
};

Tensor conv2d(const Tensor& x, const ConvLayer& layer);

enum class NormKind { BatchNorm, LayerNorm };

struct NormLayer {
    NormKind kind = NormKind::LayerNorm;
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;
    // Batch-norm only.
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    /// Key under which training-mode statistics are reported.
    std::string stats_key;
};

/// Batch statistics produced by a training-mode batch norm. The owner of the
/// running buffers applies them after the forward pass.
struct StatUpdate {
    std::string key;
    double momentum = 0.1;
    std::vector<double> mean;
    std::vector<double> var;
};

/// Records softmax attention weights, (B*heads, N, N) per call.
struct AttentionProbe {
    std::vector<Tensor> weights;
};

struct ForwardContext {
    bool training = false;
    std::vector<StatUpdate> stat_updates;
    AttentionProbe* probe = nullptr;
};

Tensor normalize(const Tensor& x, const NormLayer& norm, ForwardContext& ctx);

struct ConvNormAct {
    ConvLayer conv;
    std::optional<NormLayer> norm;
    Activation act = Activation::None;
};

Tensor apply(const Tensor& x, const ConvNormAct& layer, ForwardContext& ctx);

/// y = x W + b with W stored (in, out). Works on any leading shape.
struct LinearLayer {
    Tensor weight;
    Tensor bias;
};

Tensor linear(const Tensor& x, const LinearLayer& layer);

/// Query/key/value map d_in -> d, output maps d -> d_in. `heads` only affects
/// softmax attention.
struct AttentionParams {
    LinearLayer query;
    LinearLayer key;
    LinearLayer value;
    LinearLayer output;
    std::size_t heads = 1;
};

enum class AttentionKind { Softmax, Linear };

/// Multi-head scaled dot-product attention over tokens z of shape (B,N,d_in)
/// or (N,d_in).
Tensor multi_head_attention(const Tensor& z, const AttentionParams& params, AttentionProbe* probe = nullptr);

/// phi(Q) (phi(K)^T V) with phi = ELU + 1, then the output projection. The
/// d x d context is formed once; no N x N matrix is built.
Tensor linear_attention(const Tensor& z, const AttentionParams& params);

struct FeedForward {
    LinearLayer fc1;
    LinearLayer fc2;
    Activation act = Activation::Gelu;
};

Tensor feed_forward(const Tensor& z, const FeedForward& ffn);

enum class EncoderStyle {
    /// Z' = FFN(Attn(LN(Z))) + Z
    Paper,
    /// Y = Z + Attn(LN1(Z)); Z' = Y + FFN(LN2(Y))
    Conventional,
};

struct EncoderLayerParams {
    NormLayer norm1;
    AttentionParams attention;
    NormLayer norm2;  // conventional style only
    FeedForward ffn;
};

Tensor encoder_layer(const Tensor& z, const EncoderLayerParams& params, AttentionKind kind, EncoderStyle style,
                     ForwardContext& ctx);

inline Tensor mhsa_encoder_layer(const Tensor& z, const EncoderLayerParams& params, EncoderStyle style,
                                 ForwardContext& ctx) {
    return encoder_layer(z, params, AttentionKind::Softmax, style, ctx);
}

/// Patch helpers on (B,C,H,W) maps; see ops::unfold for the ordering.
Tensor unfold(const Tensor& x, std::size_t patch);
Tensor fold(const Tensor& z, std::size_t channels, std::size_t height, std::size_t width, std::size_t patch);

struct MobileViTBlockParams {
    ConvNormAct local_conv;     // n x n, C -> C
    ConvNormAct local_project;  // 1 x 1, C -> C'
    std::size_t patch = 2;
    std::vector<EncoderLayerParams> encoder;
    ConvNormAct fusion;         // n x n, C' (or C' + C when concatenating) -> C''
    EncoderStyle style = EncoderStyle::Paper;
    bool fusion_concat_input = false;
};

/// local conv pair -> unfold -> L softmax encoder layers -> fold -> fusion conv.
/// `fusion_out`, when given, receives the fusion convolution's output.
Tensor mobilevit_block(const Tensor& x, const MobileViTBlockParams& params, ForwardContext& ctx,
                       Tensor* fusion_out = nullptr);

struct InvertedResidualParams {
    ConvNormAct expand;     // 1 x 1, C -> C*t
    ConvNormAct depthwise;  // 3 x 3, groups = C*t
    ConvNormAct project;    // 1 x 1, C*t -> C
};

/// X + project(depthwise(expand(X))). Stride 1, channel preserving.
Tensor inverted_residual_block(const Tensor& x, const InvertedResidualParams& params, ForwardContext& ctx);

struct MobileViTv2BlockParams {
    InvertedResidualParams irb;
    std::size_t patch = 2;
    std::vector<EncoderLayerParams> encoder;
    ConvLayer fusion;  // 1 x 1, C -> C
    EncoderStyle style = EncoderStyle::Paper;
};

/// IRB -> unfold -> L linear-attention encoder layers -> fold -> 1x1 conv,
/// plus the IRB output as residual.
Tensor mobilevit_v2_block(const Tensor& x, const MobileViTv2BlockParams& params, ForwardContext& ctx,
                          Tensor* fusion_out = nullptr);

}  // namespace vitens::nn
