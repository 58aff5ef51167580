#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace xcnn {

inline constexpr std::size_t kImageSize = 30;

namespace detail {
/// Bilinear sample of channel ch at fractional (y, x), clamped to the edges.
template <typename T>
double sample_clamped(const BasicTensor<T>& img, double y, double x, std::size_t ch) {
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    auto px = [&](std::size_t r, std::size_t q) { return static_cast<double>(img[(r * w + q) * c + ch]); };
    const double top = px(y0, x0) + fx * (px(y0, x1) - px(y0, x0));
    const double bottom = px(y1, x0) + fx * (px(y1, x1) - px(y1, x0));
    return top + fy * (bottom - top);
}

template <typename T>
void require_image(const BasicTensor<T>& img, const char* what) {
    if (img.rank() != 3 || img.dim(0) == 0 || img.dim(1) == 0 || img.dim(2) == 0)
        throw DimensionError(std::string(what) + " expects a non-empty (h, w, c) image, got " +
                             shape_str(img.shape()));
}
} // namespace detail

/// Half-pixel-centered bilinear resize of an (h, w, c) image.
template <typename T>
Tensor resize_bilinear(const BasicTensor<T>& img, std::size_t out_h, std::size_t out_w) {
    detail::require_image(img, "resize_bilinear");
    if (out_h == 0 || out_w == 0)
        throw ParameterError("resize_bilinear target must be positive, got " + std::to_string(out_h) + "x" +
                             std::to_string(out_w));
    const std::size_t c = img.dim(2);
    const double sy = static_cast<double>(img.dim(0)) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.dim(1)) / static_cast<double>(out_w);
    Tensor out({out_h, out_w, c});
    for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j)
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(i * out_w + j) * c + ch] =
                    detail::sample_clamped(img, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5, ch);
    return out;
}

/// Rounds to nearest and clamps to [0, 255].
inline ByteImage quantize_bytes(const Tensor& img) {
    ByteImage out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::clamp(std::round(img[i]), 0.0, 255.0));
    return out;
}

inline Tensor normalize_unit(const ByteImage& img) {
    Tensor out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] / 255.0;
    return out;
}

/// Decoded plane to network input: resize, requantize to bytes, scale to [0, 1].
inline Tensor preprocess(const ByteImage& img, std::size_t size = kImageSize) {
    return normalize_unit(quantize_bytes(resize_bilinear(img, size, size)));
}

// ---------------------------------------------------------------- augmentation

struct AugmentParams {
    double rotation_deg = 0.0;
    double shift_x = 0.0; // fraction of width
    double shift_y = 0.0; // fraction of height
    double shear_deg = 0.0;
    double zoom = 1.0;

    friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

struct AugmentRanges {
    double rotation_deg = 15.0;
    double shift = 0.10;
    double shear_deg = 10.0;
    double zoom_min = 0.9;
    double zoom_max = 1.1;

    bool contains(const AugmentParams& p) const {
        return std::abs(p.rotation_deg) <= rotation_deg && std::abs(p.shift_x) <= shift &&
               std::abs(p.shift_y) <= shift && std::abs(p.shear_deg) <= shear_deg && p.zoom >= zoom_min &&
               p.zoom <= zoom_max;
    }

    AugmentParams sample(Rng& rng) const {
        AugmentParams p;
        p.rotation_deg = rng.uniform(-rotation_deg, rotation_deg);
        p.shift_x = rng.uniform(-shift, shift);
        p.shift_y = rng.uniform(-shift, shift);
        p.shear_deg = rng.uniform(-shear_deg, shear_deg);
        p.zoom = rng.uniform(zoom_min, zoom_max);
        return p;
    }
};

/// 2x2 linear part of the warp: rotate * shear * zoom (zoom applied first).
struct Affine2 {
    double a = 1, b = 0, c = 0, d = 1;

    Affine2 operator*(const Affine2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    double det() const { return a * d - b * c; }
    Affine2 inverse() const {
        const double k = det();
        if (!(std::abs(k) > 1e-12)) throw ParameterError("augmentation transform is singular");
        return {d / k, -b / k, -c / k, a / k};
    }

    static Affine2 of(const AugmentParams& p) {
        constexpr double deg = std::numbers::pi / 180.0;
        const double r = p.rotation_deg * deg;
        const Affine2 rotate{std::cos(r), -std::sin(r), std::sin(r), std::cos(r)};
        const Affine2 shear{1.0, std::tan(p.shear_deg * deg), 0.0, 1.0};
        const Affine2 zoom{p.zoom, 0.0, 0.0, p.zoom};
        return rotate * shear * zoom;
    }
};

/// Warps an (h, w, c) image in [0, 1] by zoom, shear, rotation (about the
/// center) and then shift. Each output pixel is inverse-mapped and sampled
/// bilinearly; samples outside the image take the nearest edge pixel.
inline Tensor augment_sample(const Tensor& img, const AugmentParams& p) {
    detail::require_image(img, "augment_sample");
    if (!(p.zoom > 0.0)) throw ParameterError("augment zoom must be positive");
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    const Affine2 inv = Affine2::of(p).inverse();
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double ty = p.shift_y * static_cast<double>(h), tx = p.shift_x * static_cast<double>(w);
    Tensor out(img.shape());
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double u = static_cast<double>(j) - cx - tx, v = static_cast<double>(i) - cy - ty;
            const double x = inv.a * u + inv.b * v + cx;
            const double y = inv.c * u + inv.d * v + cy;
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(i * w + j) * c + ch] = std::clamp(detail::sample_clamped(img, y, x, ch), 0.0, 1.0);
        }
    return out;
}

} // namespace xcnn
