#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vitens/model.hpp"

namespace vitens {

/// H x W saliency in [0, 1].
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
    std::string layer;
    std::size_t target_class = 0;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Grad-CAM from a feature map A (C,h,w) and dScore/dA of the same shape:
/// ReLU(sum_c mean(dA_c) A_c), bilinear upsample, divide by the max.
Heatmap grad_cam_from(const Tensor& activations, const Tensor& gradients, std::size_t height, std::size_t width);

/// `image` is (H,W,3). The score is the target logit; `layer` defaults to
/// the model's last fusion convolution.
Heatmap grad_cam(const Model& model, const Tensor& image, std::size_t class_id, const std::string& layer = {});

/// Signed attribution per non-overlapping patch.
struct ShapleyMap {
    std::size_t image_height = 0;
    std::size_t image_width = 0;
    std::size_t patch = 0;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    std::size_t permutations = 0;
    std::string baseline;
    /// Per patch, row-major over the grid.
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    /// Per patch sum of squared marginals, for standard errors.
    std::vector<double> sq_sums;

    std::size_t num_patches() const { return grid_rows * grid_cols; }
    double value(std::size_t p) const { return counts[p] ? sums[p] / static_cast<double>(counts[p]) : 0.0; }
    std::vector<double> values() const;
    /// Monte-Carlo standard error of one patch's estimate.
    double standard_error(std::size_t p) const;
    /// Merges a partial accumulator over the same geometry.
    void merge(const ShapleyMap& other);
};

/// f(image) for an (H,W,3) image, e.g. a class probability.
using ImageScore = std::function<double(const Tensor&)>;

struct ShapleyOptions {
    std::size_t patch = 0;         // 0: image side / 8
    std::size_t permutations = 64;  // M; each is also used reversed
    std::uint64_t seed = 0;
};

/// Permutation-sampling Shapley values of `f` over image patches, walking
/// from `baseline` to `image`. Every permutation contributes exactly
/// f(image) - f(baseline) in total.
ShapleyMap shapley_patches(const ImageScore& f, const Tensor& image, const Tensor& baseline,
                           const ShapleyOptions& options, const std::string& baseline_name = "custom");

/// Model convenience: f = softmax probability of `class_id`.
ShapleyMap shapley_patches(const Model& model, const Tensor& image, std::size_t class_id, const Tensor& baseline,
                           const ShapleyOptions& options, const std::string& baseline_name = "custom");

/// Constant 0.5 image.
Tensor gray_baseline(std::size_t height, std::size_t width);

/// 0.5 * image + 0.5 * color. Grad-CAM: red scaled by the heat. Shapley:
/// red for positive, blue for negative, scaled by max |value|.
Tensor overlay(const Tensor& image, const Heatmap& map);
Tensor overlay(const Tensor& image, const ShapleyMap& map);

/// Writes the overlay; extension picks PNG or PPM.
void render_overlay(const Tensor& image, const Heatmap& map, const std::filesystem::path& path);
void render_overlay(const Tensor& image, const ShapleyMap& map, const std::filesystem::path& path);

/// Raw maps as CSV (one grid row per line).
std::string heatmap_csv(const Heatmap& map);
std::string shapley_csv(const ShapleyMap& map);

}  // namespace vitens
