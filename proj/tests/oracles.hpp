#pragma once

// Independent reference implementations used only by the tests. Nothing in
// here calls into the library's kernels; each oracle is the most direct
// transcription of the defining formula.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <xcnn/rng.hpp>
#include <xcnn/tensor.hpp>

namespace oracle {

using xcnn::Tensor;

inline Tensor random_tensor(xcnn::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    xcnn::Rng rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Triple loop c[i][j] = sum_k a[i][k] b[k][j].
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Tensor c({m, p});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < k; ++q) s += a.at({i, q}) * b.at({q, j});
            c.at({i, j}) = s;
        }
    return c;
}

/// out[n,i,j,o] = bias[o] + sum input[n,i+di,j+dj,ci] * kernels[di,dj,ci,o].
inline Tensor naive_conv(const Tensor& in, const Tensor& k, const Tensor& bias) {
    const std::size_t N = in.dim(0), H = in.dim(1), W = in.dim(2), C = in.dim(3);
    const std::size_t KH = k.dim(0), KW = k.dim(1), O = k.dim(3);
    Tensor out({N, H - KH + 1, W - KW + 1, O});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i + KH <= H; ++i)
            for (std::size_t j = 0; j + KW <= W; ++j)
                for (std::size_t o = 0; o < O; ++o) {
                    double s = bias.at({o});
                    for (std::size_t di = 0; di < KH; ++di)
                        for (std::size_t dj = 0; dj < KW; ++dj)
                            for (std::size_t c = 0; c < C; ++c) s += in.at({n, i + di, j + dj, c}) * k.at({di, dj, c, o});
                    out.at({n, i, j, o}) = s;
                }
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Central-difference gradient of f with respect to every element of x.
inline Tensor numeric_gradient(Tensor& x, const std::function<double()>& f, double h = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}));
    }
    return worst;
}

/// Adam written out scalar by scalar, with the bias corrections accumulated
/// as running products instead of pow().
struct ScriptedAdam {
    double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0, b1t = 1.0, b2t = 1.0;

    double step(double theta, double g) {
        b1t *= b1;
        b2t *= b2;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - b1t);
        const double vh = v / (1 - b2t);
        return theta - lr * mh / (std::sqrt(vh) + eps);
    }
};

/// Bilinear sample with half-pixel centers of a single-channel h x w image
/// (row-major vector), coordinates clamped to the image.
inline double bilinear_at(const std::vector<double>& img, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, double(h - 1));
    x = std::clamp(x, 0.0, double(w - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - double(y0), fx = x - double(x0);
    const double top = img[y0 * w + x0] * (1 - fx) + img[y0 * w + x1] * fx;
    const double bot = img[y1 * w + x0] * (1 - fx) + img[y1 * w + x1] * fx;
    return top * (1 - fy) + bot * fy;
}

inline std::vector<double> resize_oracle(const std::vector<double>& img, std::size_t h, std::size_t w,
                                         std::size_t oh, std::size_t ow) {
    std::vector<double> out(oh * ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            const double y = (double(i) + 0.5) * double(h) / double(oh) - 0.5;
            const double x = (double(j) + 0.5) * double(w) / double(ow) - 0.5;
            out[i * ow + j] = bilinear_at(img, h, w, y, x);
        }
    return out;
}

/// Inverse-mapped affine warp about the image center. The forward map sends
/// a source point p to A (p - c) + c + t with A = R(rot) * Shear(sh) * zoom.
inline std::vector<double> affine_oracle(const std::vector<double>& img, std::size_t h, std::size_t w, double rot_deg,
                                         double shift_x_px, double shift_y_px, double shear_deg, double zoom) {
    const double pi = 3.14159265358979323846;
    const double r = rot_deg * pi / 180.0, s = std::tan(shear_deg * pi / 180.0);
    // A = [[cos, -sin], [sin, cos]] * [[1, s], [0, 1]] * zoom
    const double a = zoom * std::cos(r), b = zoom * (std::cos(r) * s - std::sin(r));
    const double c = zoom * std::sin(r), d = zoom * (std::sin(r) * s + std::cos(r));
    const double det = a * d - b * c;
    const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
    std::vector<double> out(h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double u = double(j) - cx - shift_x_px, v = double(i) - cy - shift_y_px;
            const double sx = (d * u - b * v) / det + cx;
            const double sy = (-c * u + a * v) / det + cy;
            out[i * w + j] = std::clamp(bilinear_at(img, h, w, sy, sx), 0.0, 1.0);
        }
    return out;
}

} // namespace oracle
