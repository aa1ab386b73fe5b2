#include "vitens/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace vitens {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

DecodedImage from_bytes(std::size_t h, std::size_t w, std::size_t channels, const std::vector<double>& values,
                        double maxval) {
    DecodedImage out;
    out.grayscale = channels == 1;
    std::vector<double> rgb(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = values[i * channels + (channels == 1 ? 0 : c)];
            rgb[i * 3 + c] = v / maxval;
        }
    }
    out.pixels = Tensor({h, w, 3}, std::move(rgb));
    return out;
}

DecodedImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw ImageError("cannot decode " + path.string() + ": " + image.message);
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ImageError("cannot decode " + path.string() + ": " + msg);
    }
    std::vector<double> values(buffer.begin(), buffer.end());
    return from_bytes(image.height, image.width, color ? 3 : 1, values, 255.0);
}

// Skips whitespace and '#' comments in a PNM header.
void skip_space(std::istream& in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

std::size_t read_header_int(std::istream& in, const std::filesystem::path& path) {
    skip_space(in);
    long long v = -1;
    if (!(in >> v) || v <= 0) throw ImageError("cannot decode " + path.string() + ": bad PNM header");
    return static_cast<std::size_t>(v);
}

DecodedImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
        throw ImageError("cannot decode " + path.string() + ": unsupported PNM type");
    }
    const std::size_t w = read_header_int(in, path);
    const std::size_t h = read_header_int(in, path);
    const std::size_t maxval = read_header_int(in, path);
    if (maxval > 65535) throw ImageError("cannot decode " + path.string() + ": maxval too large");
    const std::size_t channels = (magic == "P3" || magic == "P6") ? 3 : 1;
    const std::size_t count = w * h * channels;
    std::vector<double> values(count);
    if (magic == "P5" || magic == "P6") {
        in.get();  // single whitespace after maxval
        const std::size_t bytes_per = maxval < 256 ? 1 : 2;
        std::vector<unsigned char> raw(count * bytes_per);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
            throw ImageError("cannot decode " + path.string() + ": truncated pixel data");
        }
        for (std::size_t i = 0; i < count; ++i) {
            values[i] = bytes_per == 1 ? raw[i] : (raw[2 * i] << 8 | raw[2 * i + 1]);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            long long v = 0;
            if (!(in >> v) || v < 0) throw ImageError("cannot decode " + path.string() + ": bad pixel value");
            values[i] = static_cast<double>(v);
        }
    }
    for (double v : values) {
        if (v > static_cast<double>(maxval)) throw ImageError("cannot decode " + path.string() + ": value > maxval");
    }
    return from_bytes(h, w, channels, values, static_cast<double>(maxval));
}

void check_image(const Tensor& image) {
    if (image.dim() != 3 || image.shape()[2] != 3) {
        throw ShapeError("expected an (H,W,3) image, got " + shape_str(image.shape()));
    }
}

std::vector<unsigned char> to_bytes(const Tensor& image) {
    check_image(image);
    const auto data = image.data();
    std::vector<unsigned char> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out[i] = static_cast<unsigned char>(std::lround(std::clamp(data[i], 0.0, 1.0) * 255.0));
    }
    return out;
}

}  // namespace

DecodedImage read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
    throw ImageError("cannot decode " + path.string() + ": unsupported extension '" + ext + "'");
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    check_image(image);
    const std::size_t h = image.shape()[0], w = image.shape()[1];
    if (height == 0 || width == 0) throw ShapeError("resize target must be positive");
    if (h == height && w == width) return image.detach();
    const auto src = image.data();
    std::vector<double> out(height * width * 3);
    auto coord = [](std::size_t i, std::size_t in, std::size_t outn) {
        const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(in - 1));
    };
    for (std::size_t y = 0; y < height; ++y) {
        const double sy = coord(y, h, height);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double sx = coord(x, w, width);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                auto px = [&](std::size_t yy, std::size_t xx) { return src[(yy * w + xx) * 3 + c]; };
                const double top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                const double bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                out[(y * width + x) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    return Tensor({height, width, 3}, std::move(out));
}

Tensor load_resize_image(const std::filesystem::path& path, std::size_t height, std::size_t width, bool* grayscale) {
    DecodedImage img = read_image(path);
    if (grayscale) *grayscale = img.grayscale;
    return resize_bilinear(img.pixels, height, width);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    const auto bytes = to_bytes(image);
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(image.shape()[1]);
    out.height = static_cast<png_uint_32>(image.shape()[0]);
    out.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&out, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write " + path.string() + ": " + out.message);
    }
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    const auto bytes = to_bytes(image);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "P6\n" << image.shape()[1] << ' ' << image.shape()[0] << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return write_png(path, image);
    if (ext == ".ppm") return write_ppm(path, image);
    throw std::invalid_argument("unsupported image extension '" + ext + "' (use .png or .ppm)");
}

Tensor hwc_to_chw(const Tensor& image) {
    check_image(image);
    const std::size_t h = image.shape()[0], w = image.shape()[1];
    const auto src = image.data();
    std::vector<double> out(src.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = src[(y * w + x) * 3 + c];
    return Tensor({3, h, w}, std::move(out));
}

Tensor chw_to_hwc(const Tensor& image) {
    if (image.dim() != 3 || image.shape()[0] != 3) {
        throw ShapeError("expected a (3,H,W) image, got " + shape_str(image.shape()));
    }
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    const auto src = image.data();
    std::vector<double> out(src.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(y * w + x) * 3 + c] = src[(c * h + y) * w + x];
    return Tensor({h, w, 3}, std::move(out));
}

}  // namespace vitens
