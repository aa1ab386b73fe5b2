#include "vitens/xai.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vitens/image.hpp"
#include "vitens/ops.hpp"
#include "vitens/rng.hpp"

namespace vitens {

namespace {

void check_image(const Tensor& image, const char* what) {
    if (image.dim() != 3 || image.shape()[2] != 3) {
        throw ShapeError(std::string(what) + " must be (H,W,3), got " + shape_str(image.shape()));
    }
}

// Bilinear upsample of a single-channel map, same convention as images.
std::vector<double> upsample(const std::vector<double>& map, std::size_t h, std::size_t w, std::size_t height,
                             std::size_t width) {
    std::vector<double> rgb(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i) rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = map[i];
    const Tensor up = resize_bilinear(Tensor({h, w, 3}, std::move(rgb)), height, width);
    std::vector<double> out(height * width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = up.data()[i * 3];
    return out;
}

}  // namespace

Heatmap grad_cam_from(const Tensor& activations, const Tensor& gradients, std::size_t height, std::size_t width) {
    if (activations.dim() != 3 || activations.shape() != gradients.shape()) {
        throw ShapeError("grad_cam expects matching (C,h,w) activations and gradients, got " +
                         shape_str(activations.shape()) + " and " + shape_str(gradients.shape()));
    }
    const std::size_t c = activations.shape()[0], h = activations.shape()[1], w = activations.shape()[2];
    const auto a = activations.data();
    const auto g = gradients.data();
    std::vector<double> cam(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double alpha = 0.0;
        for (std::size_t i = 0; i < h * w; ++i) alpha += g[ch * h * w + i];
        alpha /= static_cast<double>(h * w);
        for (std::size_t i = 0; i < h * w; ++i) cam[i] += alpha * a[ch * h * w + i];
    }
    for (double& v : cam) v = std::max(v, 0.0);

    Heatmap out;
    out.height = height;
    out.width = width;
    out.values = upsample(cam, h, w, height, width);
    const double mx = *std::max_element(out.values.begin(), out.values.end());
    for (double& v : out.values) v = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) : 0.0;
    return out;
}

Heatmap grad_cam(const Model& model, const Tensor& image, std::size_t class_id, const std::string& layer) {
    check_image(image, "grad_cam image");
    const std::size_t k = model.spec().num_classes;
    if (class_id >= k) {
        throw std::out_of_range("class id " + std::to_string(class_id) + " outside [0," + std::to_string(k) + ")");
    }
    const std::string target = layer.empty() ? model.feature_layer() : layer;
    const std::size_t h = image.shape()[0], w = image.shape()[1];

    Tape tape;
    // Inputs are watched so that every layer output lands on the tape.
    const Tensor input = tape.watch(ops::reshape(hwc_to_chw(image), {1, 3, h, w}));
    nn::ForwardContext ctx;
    const auto result = model.forward(input, model.params().values(), ctx);
    auto it = result.taps.find(target);
    if (it == result.taps.end()) throw std::invalid_argument("model has no layer named '" + target + "'");
    const Tensor& features = it->second;
    const Tensor score = ops::slice(ops::reshape(result.logits, {k}), 0, class_id, class_id + 1);
    const GradientMap grads = backward(score);
    const Shape fs = features.shape();
    const Shape chw{fs[1], fs[2], fs[3]};
    Heatmap out = grad_cam_from(Tensor(chw, features.values()), Tensor(chw, grads.of(features)), h, w);
    out.layer = target;
    out.target_class = class_id;
    return out;
}

std::vector<double> ShapleyMap::values() const {
    std::vector<double> out(num_patches());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = value(p);
    return out;
}

double ShapleyMap::standard_error(std::size_t p) const {
    if (counts[p] < 2) return 0.0;
    const double n = static_cast<double>(counts[p]);
    const double mean = sums[p] / n;
    const double var = std::max(0.0, (sq_sums[p] - n * mean * mean) / (n - 1.0));
    return std::sqrt(var / n);
}

void ShapleyMap::merge(const ShapleyMap& other) {
    if (other.patch != patch || other.grid_rows != grid_rows || other.grid_cols != grid_cols) {
        throw std::invalid_argument("cannot merge Shapley maps over different patch grids");
    }
    for (std::size_t p = 0; p < num_patches(); ++p) {
        sums[p] += other.sums[p];
        sq_sums[p] += other.sq_sums[p];
        counts[p] += other.counts[p];
    }
    permutations += other.permutations;
}

ShapleyMap shapley_patches(const ImageScore& f, const Tensor& image, const Tensor& baseline,
                           const ShapleyOptions& options, const std::string& baseline_name) {
    check_image(image, "shapley image");
    if (baseline.shape() != image.shape()) {
        throw ShapeError("baseline " + shape_str(baseline.shape()) + " does not match image " + shape_str(image.shape()));
    }
    if (options.permutations == 0) throw std::invalid_argument("Shapley needs at least one permutation");
    const std::size_t h = image.shape()[0], w = image.shape()[1];
    const std::size_t patch = options.patch ? options.patch : std::max<std::size_t>(1, std::min(h, w) / 8);
    if (h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("patch size " + std::to_string(patch) + " does not tile a " + std::to_string(h) +
                                    "x" + std::to_string(w) + " image");
    }
    ShapleyMap map;
    map.image_height = h;
    map.image_width = w;
    map.patch = patch;
    map.grid_rows = h / patch;
    map.grid_cols = w / patch;
    map.permutations = options.permutations;
    map.baseline = baseline_name;
    const std::size_t n = map.num_patches();
    map.sums.assign(n, 0.0);
    map.sq_sums.assign(n, 0.0);
    map.counts.assign(n, 0);

    // Patches whose pixels equal the baseline cannot change f; they get an
    // exact zero without evaluation.
    const auto img = image.data();
    const auto base = baseline.data();
    auto for_pixels = [&](std::size_t p, auto&& fn) {
        const std::size_t py = p / map.grid_cols, px = p % map.grid_cols;
        for (std::size_t y = py * patch; y < (py + 1) * patch; ++y)
            for (std::size_t x = px * patch; x < (px + 1) * patch; ++x)
                for (std::size_t c = 0; c < 3; ++c) fn((y * w + x) * 3 + c);
    };
    std::vector<char> dummy(n, 1);
    for (std::size_t p = 0; p < n; ++p) {
        for_pixels(p, [&](std::size_t i) {
            if (img[i] != base[i]) dummy[p] = 0;
        });
    }

    const double f_base = f(baseline.detach());
    Rng rng(options.seed);
    auto walk = [&](const std::vector<std::size_t>& order) {
        Tensor current = baseline.detach();
        double prev = f_base;
        for (std::size_t p : order) {
            double delta = 0.0;
            if (!dummy[p]) {
                auto cur = current.mutable_data();
                for_pixels(p, [&](std::size_t i) { cur[i] = img[i]; });
                const double next = f(current);
                delta = next - prev;
                prev = next;
            }
            map.sums[p] += delta;
            map.sq_sums[p] += delta * delta;
            ++map.counts[p];
        }
    };
    for (std::size_t m = 0; m < options.permutations; ++m) {
        std::vector<std::size_t> order = rng.permutation(n);
        walk(order);
        std::reverse(order.begin(), order.end());
        walk(order);
    }
    return map;
}

ShapleyMap shapley_patches(const Model& model, const Tensor& image, std::size_t class_id, const Tensor& baseline,
                           const ShapleyOptions& options, const std::string& baseline_name) {
    const std::size_t k = model.spec().num_classes;
    if (class_id >= k) {
        throw std::out_of_range("class id " + std::to_string(class_id) + " outside [0," + std::to_string(k) + ")");
    }
    const ImageScore f = [&](const Tensor& img) {
        const std::size_t h = img.shape()[0], w = img.shape()[1];
        const auto out = model.forward(ops::reshape(hwc_to_chw(img), {1, 3, h, w}));
        return out.probabilities.data()[class_id];
    };
    return shapley_patches(f, image, baseline, options, baseline_name);
}

Tensor gray_baseline(std::size_t height, std::size_t width) { return Tensor({height, width, 3}, 0.5); }

Tensor overlay(const Tensor& image, const Heatmap& map) {
    check_image(image, "overlay image");
    if (image.shape()[0] != map.height || image.shape()[1] != map.width) {
        throw ShapeError("heatmap " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                         " does not match image " + shape_str(image.shape()));
    }
    const auto src = image.data();
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double color[3] = {map.values[i], 0.0, 0.0};
        for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = 0.5 * src[i * 3 + c] + 0.5 * color[c];
    }
    return Tensor(image.shape(), std::move(out));
}

Tensor overlay(const Tensor& image, const ShapleyMap& map) {
    check_image(image, "overlay image");
    if (image.shape()[0] != map.image_height || image.shape()[1] != map.image_width) {
        throw ShapeError("Shapley map geometry does not match image " + shape_str(image.shape()));
    }
    const auto vals = map.values();
    double scale = 0.0;
    for (double v : vals) scale = std::max(scale, std::abs(v));
    const std::size_t w = map.image_width;
    const auto src = image.data();
    std::vector<double> out(src.size());
    for (std::size_t y = 0; y < map.image_height; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double v = vals[(y / map.patch) * map.grid_cols + x / map.patch];
            const double s = scale > 0.0 ? v / scale : 0.0;
            const double color[3] = {std::max(s, 0.0), 0.0, std::max(-s, 0.0)};
            for (std::size_t c = 0; c < 3; ++c) {
                out[(y * w + x) * 3 + c] = 0.5 * src[(y * w + x) * 3 + c] + 0.5 * color[c];
            }
        }
    }
    return Tensor(image.shape(), std::move(out));
}

void render_overlay(const Tensor& image, const Heatmap& map, const std::filesystem::path& path) {
    write_image(path, overlay(image, map));
}

void render_overlay(const Tensor& image, const ShapleyMap& map, const std::filesystem::path& path) {
    write_image(path, overlay(image, map));
}

std::string heatmap_csv(const Heatmap& map) {
    std::ostringstream out;
    char buf[32];
    for (std::size_t y = 0; y < map.height; ++y) {
        for (std::size_t x = 0; x < map.width; ++x) {
            std::snprintf(buf, sizeof buf, "%s%.6g", x ? "," : "", map.at(y, x));
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string shapley_csv(const ShapleyMap& map) {
    std::ostringstream out;
    char buf[40];
    const auto vals = map.values();
    for (std::size_t r = 0; r < map.grid_rows; ++r) {
        for (std::size_t c = 0; c < map.grid_cols; ++c) {
            std::snprintf(buf, sizeof buf, "%s%.10g", c ? "," : "", vals[r * map.grid_cols + c]);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace vitens
