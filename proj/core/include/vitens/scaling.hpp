#pragma once

#include <cstdint>
#include <vector>

#include "vitens/nn.hpp"

namespace vitens {

/// Random attention parameters with d_in = d.
nn::AttentionParams random_attention_params(std::size_t dim, std::size_t heads, std::uint64_t seed);

struct ScalingPoint {
    std::size_t tokens = 0;
    double seconds = 0.0;
};

/// Minimum wall time over `repeats` forward passes on (1, N, dim) tokens for
/// each N.
std::vector<ScalingPoint> time_attention(nn::AttentionKind kind, const std::vector<std::size_t>& token_counts,
                                         std::size_t dim, std::size_t repeats, std::uint64_t seed = 0);

/// Least-squares slope of log(seconds) against log(tokens).
double loglog_slope(const std::vector<ScalingPoint>& points);

/// 64, 128, 256, 512, 1024.
std::vector<std::size_t> default_token_counts();

}  // namespace vitens
