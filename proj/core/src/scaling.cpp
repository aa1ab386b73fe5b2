#include "vitens/scaling.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vitens/rng.hpp"

namespace vitens {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale) {
    Tensor t(shape, 0.0);
    for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

nn::AttentionParams random_attention_params(std::size_t dim, std::size_t heads, std::uint64_t seed) {
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    auto layer = [&] { return nn::LinearLayer{random_tensor({dim, dim}, rng, s), random_tensor({dim}, rng, s)}; };
    nn::AttentionParams p;
    p.query = layer();
    p.key = layer();
    p.value = layer();
    p.output = layer();
    p.heads = heads;
    return p;
}

std::vector<ScalingPoint> time_attention(nn::AttentionKind kind, const std::vector<std::size_t>& token_counts,
                                         std::size_t dim, std::size_t repeats, std::uint64_t seed) {
    if (repeats == 0) throw std::invalid_argument("repeats must be positive");
    const auto params = random_attention_params(dim, 1, seed);
    Rng rng(seed + 1);
    std::vector<ScalingPoint> out;
    for (std::size_t n : token_counts) {
        const Tensor z = random_tensor({1, n, dim}, rng, 1.0);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const Tensor y = kind == nn::AttentionKind::Softmax ? nn::multi_head_attention(z, params)
                                                                : nn::linear_attention(z, params);
            const auto t1 = std::chrono::steady_clock::now();
            if (y.numel() != n * dim) throw std::logic_error("unexpected attention output size");
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        out.push_back({n, best});
    }
    return out;
}

double loglog_slope(const std::vector<ScalingPoint>& points) {
    if (points.size() < 2) throw std::invalid_argument("slope needs at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(points.size());
    for (const auto& p : points) {
        const double x = std::log(static_cast<double>(p.tokens));
        const double y = std::log(p.seconds);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<std::size_t> default_token_counts() {
    std::vector<std::size_t> out;
    for (std::size_t n = 64; n <= 1024; n *= 2) out.push_back(n);
    return out;
}

}  // namespace vitens
