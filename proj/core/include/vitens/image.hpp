#pragma once

#include <filesystem>
#include <stdexcept>

#include "vitens/tensor.hpp"

namespace vitens {

/// Raised when an image file cannot be decoded.
class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Images are (H, W, 3) tensors with values in [0, 1].
struct DecodedImage {
    Tensor pixels;
    bool grayscale = false;
};

/// Reads PNG or PNM (P2/P3/P5/P6). Grayscale input is replicated to RGB.
DecodedImage read_image(const std::filesystem::path& path);

/// Bilinear resize with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// read_image + resize_bilinear. `grayscale`, if given, reports a
/// replicated single-channel source.
Tensor load_resize_image(const std::filesystem::path& path, std::size_t height, std::size_t width,
                         bool* grayscale = nullptr);

/// 8-bit RGB writers; values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Picks the writer from the extension (.png, .ppm).
void write_image(const std::filesystem::path& path, const Tensor& image);

/// (H,W,3) <-> (3,H,W).
Tensor hwc_to_chw(const Tensor& image);
Tensor chw_to_hwc(const Tensor& image);

}  // namespace vitens
