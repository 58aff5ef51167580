#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace xcnn {

namespace detail {
struct PngImage {
    png_image image{};
    PngImage() { image.version = PNG_IMAGE_VERSION; }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

inline bool has_png_signature(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<unsigned char, 8> sig{};
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
    return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, sig.size()) == 0;
}
} // namespace detail

/// 0.299 R + 0.587 G + 0.114 B, rounded to nearest.
inline std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    return static_cast<std::uint8_t>(std::min(255.0, std::round(y)));
}

/// Decodes a PNG into an (h, w, 1) byte plane. Color sources are reduced by
/// luminance; alpha is composited onto black.
inline ByteImage load_grayscale(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) throw IoError("cannot open image " + path.string());
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot read image " + path.string());
    }
    if (!detail::has_png_signature(path)) throw FormatError("not a PNG image: " + path.string());

    detail::PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.string().c_str()))
        throw IoError("corrupt PNG " + path.string() + ": " + png.image.message);
    png.image.format = PNG_FORMAT_RGB;
    const std::size_t h = png.image.height, w = png.image.width;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, rgb.data(), 0, nullptr))
        throw IoError("corrupt PNG " + path.string() + ": " + png.image.message);

    ByteImage out({h, w, 1});
    for (std::size_t i = 0; i < h * w; ++i) out[i] = luminance(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
    return out;
}

/// Writes an (h, w, c) byte image with c = 1 (gray), 3 (RGB) or 4 (RGBA).
inline void save_png(const std::filesystem::path& path, const ByteImage& img) {
    if (img.rank() != 3) throw DimensionError("save_png expects (h, w, c), got " + shape_str(img.shape()));
    detail::PngImage png;
    png.image.height = static_cast<png_uint_32>(img.dim(0));
    png.image.width = static_cast<png_uint_32>(img.dim(1));
    switch (img.dim(2)) {
    case 1: png.image.format = PNG_FORMAT_GRAY; break;
    case 3: png.image.format = PNG_FORMAT_RGB; break;
    case 4: png.image.format = PNG_FORMAT_RGBA; break;
    default: throw DimensionError("save_png supports 1, 3 or 4 channels, got " + std::to_string(img.dim(2)));
    }
    if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, img.raw(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + png.image.message);
}

} // namespace xcnn
