#include <gtest/gtest.h>

#include <cmath>

#include "common/fixtures.hpp"
#include "common/oracles.hpp"
#include "test_util.hpp"

using namespace vitens;
using vitens::testing::bitwise_equal;
using namespace vitens::oracles;

namespace {

Tensor permute_rows(const Tensor& z, const std::vector<std::size_t>& order) {
    const std::size_t d = z.shape()[1];
    Tensor out(z.shape(), 0.0);
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) out.mutable_data()[i * d + c] = z[order[i] * d + c];
    return out;
}

}  // namespace

TEST(Conv, OneByOneIdentityKernelCopiesInput) {
    Rng rng(1);
    const Tensor x = fixtures::uniform({2, 3, 4, 5}, rng);
    Tensor w({3, 3, 1, 1}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
    EXPECT_TRUE(bitwise_equal(ops::conv2d(x, w, Tensor(), {}), x));
}

TEST(Conv, OnesKernelCountsNeighbours) {
    const Tensor x({1, 1, 3, 3}, 1.0);
    const Tensor w({1, 1, 3, 3}, 1.0);
    const Tensor y = ops::conv2d(x, w, Tensor({1}, 0.5), {1, 1, 1});
    EXPECT_EQ(y.values(), (std::vector<double>{4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5}));
    const Tensor s = ops::conv2d(Tensor({1, 1, 4, 4}, 1.0), w, Tensor(), {2, 1, 1});
    EXPECT_EQ(s.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(s.values(), (std::vector<double>{4, 6, 6, 9}));
}

TEST(Conv, DepthwiseKeepsChannelsSeparate) {
    Tensor x({1, 2, 2, 2}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) x.mutable_data()[i] = 1.0;  // channel 0 ones, channel 1 zeros
    const Tensor w({2, 1, 1, 1}, std::vector<double>{2.0, 3.0});
    const Tensor y = ops::conv2d(x, w, Tensor(), {1, 0, 2});
    EXPECT_EQ(y.values(), (std::vector<double>{2, 2, 2, 2, 0, 0, 0, 0}));
}

TEST(Conv, RejectsBadShapes) {
    EXPECT_THROW(ops::conv2d(Tensor({1, 3, 4, 4}, 0.0), Tensor({2, 2, 3, 3}, 0.0), Tensor(), {}), ShapeError);
    EXPECT_THROW(ops::conv2d(Tensor({1, 3, 4, 4}, 0.0), Tensor({4, 1, 3, 3}, 0.0), Tensor(), {1, 1, 2}), ShapeError);
}

TEST(Patches, UnfoldColumnOrder) {
    // (1,2,2,2): channel 0 = 0..3, channel 1 = 10..13, P = 2, one patch.
    const Tensor x({1, 2, 2, 2}, std::vector<double>{0, 1, 2, 3, 10, 11, 12, 13});
    const Tensor z = ops::unfold(x, 2);
    EXPECT_EQ(z.shape(), (Shape{1, 1, 8}));
    EXPECT_EQ(z.values(), (std::vector<double>{0, 10, 1, 11, 2, 12, 3, 13}));
}

TEST(Patches, FoldUnfoldAreBitwiseInverses) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = std::vector<std::size_t>{1, 2, 4}[trial % 3];
        const std::size_t b = 1 + rng.below(2), c = 1 + rng.below(4);
        const std::size_t h = p * (1 + rng.below(4)), w = p * (1 + rng.below(4));
        const Tensor x = fixtures::uniform({b, c, h, w}, rng);
        EXPECT_TRUE(bitwise_equal(ops::fold(ops::unfold(x, p), c, h, w, p), x));
        const Tensor z = fixtures::uniform({b, (h / p) * (w / p), p * p * c}, rng);
        EXPECT_TRUE(bitwise_equal(ops::unfold(ops::fold(z, c, h, w, p), p), z));
    }
}

TEST(Patches, IndivisibleSizeIsRejected) {
    EXPECT_THROW(ops::unfold(Tensor({1, 1, 5, 4}, 0.0), 2), ShapeError);
}

TEST(Attention, BruteForceTwoTokensOneDim) {
    nn::AttentionParams p;
    const nn::LinearLayer identity{Tensor({1, 1}, 1.0), Tensor({1}, 0.0)};
    p.query = p.key = p.value = p.output = identity;
    const double a = 0.7, b = -1.3;
    const Tensor y = nn::multi_head_attention(Tensor({2, 1}, std::vector<double>{a, b}), p);
    auto row = [&](double zi) {
        const double ea = std::exp(zi * a), eb = std::exp(zi * b);
        return (ea * a + eb * b) / (ea + eb);
    };
    EXPECT_NEAR(y[0], row(a), 1e-14);
    EXPECT_NEAR(y[1], row(b), 1e-14);
}

TEST(Attention, MhsaMatchesNaiveOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = fixtures::attention(6, 8, 1 + trial % 2 * 3, rng);
        const Tensor z = fixtures::uniform({5, 6}, rng);
        const auto expect = naive_mhsa(z, p);
        const Tensor got = nn::multi_head_attention(z, p);
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10);
    }
}

TEST(Attention, SymmetricSoftmaxWeightsWhenQueryEqualsKey) {
    Rng rng(5);
    auto p = fixtures::attention(4, 4, 1, rng);
    p.key = p.query;
    nn::AttentionProbe probe;
    nn::multi_head_attention(fixtures::uniform({6, 4}, rng), p, &probe);
    ASSERT_EQ(probe.weights.size(), 1u);
    const Tensor& w = probe.weights[0];
    // Scores are symmetric, so log w_ij - log w_ji = log Z_j - log Z_i for row
    // normalizers Z; that difference must be cycle consistent.
    auto a = [&](std::size_t i, std::size_t j) { return std::log(w[i * 6 + j]) - std::log(w[j * 6 + i]); };
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(a(i, j) + a(j, k), a(i, k), 1e-9);
}

TEST(Attention, ProbeRowsSumToOne) {
    Rng rng(6);
    const auto p = fixtures::attention(6, 8, 2, rng);
    nn::AttentionProbe probe;
    nn::multi_head_attention(fixtures::uniform({3, 7, 6}, rng, -3, 3), p, &probe);
    ASSERT_EQ(probe.weights.size(), 1u);
    const Tensor& w = probe.weights[0];
    ASSERT_EQ(w.shape(), (Shape{6, 7, 7}));
    for (std::size_t r = 0; r < 6 * 7; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 7; ++j) s += w[r * 7 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Attention, LinearMatchesQuadraticReassociation) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(10), d_in = 1 + rng.below(6), d = 1 + rng.below(6);
        const auto p = fixtures::attention(d_in, d, 1, rng);
        const Tensor z = fixtures::uniform({n, d_in}, rng, -2, 2);
        const auto expect = naive_linear_attention(z, p);
        const Tensor got = nn::linear_attention(z, p);
        for (std::size_t i = 0; i < expect.size(); ++i)
            EXPECT_NEAR(got[i], expect[i], 1e-8 * std::max(1.0, std::abs(expect[i])));
    }
}

TEST(Attention, PermutationEquivariance) {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = fixtures::attention(5, 6, 2, rng);
        const Tensor z = fixtures::uniform({7, 5}, rng);
        const auto order = rng.permutation(7);
        for (auto kind : {nn::AttentionKind::Softmax, nn::AttentionKind::Linear}) {
            auto run = [&](const Tensor& t) {
                return kind == nn::AttentionKind::Softmax ? nn::multi_head_attention(t, p) : nn::linear_attention(t, p);
            };
            const Tensor lhs = run(permute_rows(z, order));
            const Tensor rhs = permute_rows(run(z), order);
            for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
        }
    }
}

TEST(Attention, HeadsMustDivideDimension) {
    Rng rng(9);
    const auto p = fixtures::attention(4, 6, 4, rng);
    EXPECT_THROW(nn::multi_head_attention(fixtures::uniform({3, 4}, rng), p), ShapeError);
}

TEST(Encoder, StylesDifferAndPreserveShape) {
    Rng rng(10);
    const auto enc = fixtures::encoder(6, 8, 2, rng);
    const Tensor z = fixtures::uniform({2, 5, 6}, rng);
    nn::ForwardContext ctx;
    const Tensor a = nn::encoder_layer(z, enc, nn::AttentionKind::Softmax, nn::EncoderStyle::Paper, ctx);
    const Tensor b = nn::encoder_layer(z, enc, nn::AttentionKind::Softmax, nn::EncoderStyle::Conventional, ctx);
    EXPECT_EQ(a.shape(), z.shape());
    EXPECT_EQ(b.shape(), z.shape());
    EXPECT_FALSE(bitwise_equal(a, b));
}

TEST(Encoder, PaperStyleWithZeroFfnIsIdentity) {
    Rng rng(11);
    auto enc = fixtures::encoder(6, 8, 2, rng);
    enc.ffn.fc2.weight = Tensor::zeros_like(enc.ffn.fc2.weight);
    enc.ffn.fc2.bias = Tensor::zeros_like(enc.ffn.fc2.bias);
    const Tensor z = fixtures::uniform({2, 5, 6}, rng);
    nn::ForwardContext ctx;
    EXPECT_TRUE(bitwise_equal(nn::encoder_layer(z, enc, nn::AttentionKind::Linear, nn::EncoderStyle::Paper, ctx), z));
}

TEST(Blocks, MobileViTShapePreservation) {
    Rng rng(12);
    const auto p = fixtures::mobilevit(8, 8, 8, 2, 2, rng);
    nn::ForwardContext ctx;
    Tensor fused;
    const Tensor x = fixtures::uniform({2, 8, 8, 8}, rng);
    const Tensor y = nn::mobilevit_block(x, p, ctx, &fused);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(bitwise_equal(fused, y));
}

TEST(Blocks, MobileViTConcatFusionChangesInputWidth) {
    Rng rng(13);
    const auto p = fixtures::mobilevit(4, 6, 5, 2, 1, rng, true);
    nn::ForwardContext ctx;
    EXPECT_EQ(nn::mobilevit_block(fixtures::uniform({1, 4, 4, 4}, rng), p, ctx).shape(), (Shape{1, 5, 4, 4}));
}

TEST(Blocks, MobileViTRejectsIndivisiblePatch) {
    Rng rng(14);
    const auto p = fixtures::mobilevit(4, 4, 4, 4, 1, rng);
    nn::ForwardContext ctx;
    EXPECT_THROW(nn::mobilevit_block(fixtures::uniform({1, 4, 6, 6}, rng), p, ctx), ShapeError);
}

TEST(Blocks, InvertedResidualWithZeroProjectionIsIdentity) {
    Rng rng(15);
    auto p = fixtures::inverted_residual(4, 2, rng);
    p.project.norm->gamma = Tensor::zeros_like(p.project.norm->gamma);
    p.project.norm->beta = Tensor::zeros_like(p.project.norm->beta);
    const Tensor x = fixtures::uniform({2, 4, 4, 4}, rng);
    nn::ForwardContext ctx;
    EXPECT_TRUE(bitwise_equal(nn::inverted_residual_block(x, p, ctx), x));
}

TEST(Blocks, V2ZeroEncoderAndFusionGivesIrbOutput) {
    Rng rng(16);
    auto p = fixtures::mobilevit_v2(8, 2, 2, rng);
    for (auto& layer : p.encoder) {
        layer.attention.output.weight = Tensor::zeros_like(layer.attention.output.weight);
        layer.ffn.fc2.weight = Tensor::zeros_like(layer.ffn.fc2.weight);
    }
    p.fusion.weight = Tensor::zeros_like(p.fusion.weight);
    p.fusion.bias = Tensor::zeros_like(p.fusion.bias);
    const Tensor x = fixtures::uniform({2, 8, 8, 8}, rng);
    nn::ForwardContext ctx;
    Tensor fused;
    const Tensor y = nn::mobilevit_v2_block(x, p, ctx, &fused);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(bitwise_equal(y, nn::inverted_residual_block(x, p.irb, ctx)));
    for (double v : fused.values()) EXPECT_EQ(v, 0.0);
}

TEST(Blocks, TrainingModeReportsBatchStatistics) {
    Rng rng(17);
    const auto p = fixtures::mobilevit_v2(4, 2, 1, rng);
    nn::ForwardContext ctx;
    ctx.training = true;
    nn::mobilevit_v2_block(fixtures::uniform({2, 4, 4, 4}, rng), p, ctx);
    EXPECT_EQ(ctx.stat_updates.size(), 3u);
    for (const auto& u : ctx.stat_updates) {
        EXPECT_FALSE(u.mean.empty());
        for (double v : u.var) EXPECT_GE(v, 0.0);
    }
}
