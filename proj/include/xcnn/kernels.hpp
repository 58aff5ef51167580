#pragma once

// Raw numeric kernels: matrix products, valid convolution and 2x2 max pooling.
// Image tensors are (sample, row, column, channel); convolution kernels are
// (kernel_row, kernel_col, in_channel, out_channel), so a kernel tensor is
// already the (kh*kw*cin) x cout matrix used by the im2col formulation.

#include <cstddef>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "tensor.hpp"

namespace xcnn {

namespace detail {

// c[m x p] += a[m x k] * b[k x p]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * p;
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T{}) continue;
            const T* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[k x p] += a[m x k]^T * b[m x p]
template <typename T>
void gemm_at_b_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T{}) continue;
            T* crow = c + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> t(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
    return t;
}

struct ConvGeometry {
    Shape4 in;
    std::size_t kh, kw, cout, oh, ow;
    std::size_t patch_len() const { return kh * kw * in.c; }
    std::size_t rows() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernels) {
    const Shape4 in = Shape4::of(input.shape());
    if (kernels.rank() != 4)
        throw DimensionError("conv2d: kernels must be rank 4 (kh, kw, cin, cout), got " +
                             shape_str(kernels.shape()));
    const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
    if (kernels.dim(2) != in.c)
        throw DimensionError("conv2d: input channel axis (" + std::to_string(in.c) +
                             ") does not match kernel in_channel axis (" + std::to_string(kernels.dim(2)) + ")");
    if (kh == 0 || kw == 0 || kernels.dim(3) == 0)
        throw DimensionError("conv2d: zero extent in kernel shape " + shape_str(kernels.shape()));
    if (kh > in.h || kw > in.w)
        throw DimensionError("conv2d: kernel rows/cols (" + std::to_string(kh) + "x" + std::to_string(kw) +
                             ") exceed input rows/cols (" + std::to_string(in.h) + "x" + std::to_string(in.w) + ")");
    return {in, kh, kw, kernels.dim(3), in.h - kh + 1, in.w - kw + 1};
}

// Unfolds one sample into a rows() x patch_len() matrix.
template <typename T>
void im2col(const T* sample, const ConvGeometry& g, T* patches) {
    const std::size_t cin = g.in.c;
    for (std::size_t i = 0; i < g.oh; ++i)
        for (std::size_t j = 0; j < g.ow; ++j) {
            T* dst = patches + (i * g.ow + j) * g.patch_len();
            for (std::size_t di = 0; di < g.kh; ++di) {
                const T* src = sample + ((i + di) * g.in.w + j) * cin;
                for (std::size_t q = 0; q < g.kw * cin; ++q) *dst++ = src[q];
            }
        }
}

template <typename T>
void col2im_acc(const T* patches, const ConvGeometry& g, T* sample) {
    const std::size_t cin = g.in.c;
    for (std::size_t i = 0; i < g.oh; ++i)
        for (std::size_t j = 0; j < g.ow; ++j) {
            const T* src = patches + (i * g.ow + j) * g.patch_len();
            for (std::size_t di = 0; di < g.kh; ++di) {
                T* dst = sample + ((i + di) * g.in.w + j) * cin;
                for (std::size_t q = 0; q < g.kw * cin; ++q) dst[q] += *src++;
            }
        }
}

} // namespace detail

/// Matrix product of rank-2 tensors.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: operands must be rank 2, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions differ: a columns " + std::to_string(a.dim(1)) +
                             " vs b rows " + std::to_string(b.dim(0)));
    BasicTensor<T> c({a.dim(0), b.dim(1)});
    detail::gemm_acc(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
    return c;
}

/// a^T * b without materializing the transpose.
template <typename T>
BasicTensor<T> matmul_at_b(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw DimensionError("matmul_at_b: row counts differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    BasicTensor<T> c({a.dim(1), b.dim(1)});
    detail::gemm_at_b_acc(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
    return c;
}

/// a * b^T.
template <typename T>
BasicTensor<T> matmul_a_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("matmul_a_bt: column counts differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const auto bt = detail::transpose(b.raw(), b.dim(0), b.dim(1));
    BasicTensor<T> c({a.dim(0), b.dim(0)});
    detail::gemm_acc(a.raw(), bt.data(), c.raw(), a.dim(0), a.dim(1), b.dim(0));
    return c;
}

/// Stride-1 convolution without padding.
template <typename T>
BasicTensor<T> conv2d_valid(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
    const auto g = detail::conv_geometry(input, kernels);
    if (bias.rank() != 1 || bias.dim(0) != g.cout)
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match out_channel axis (" +
                             std::to_string(g.cout) + ")");
    BasicTensor<T> out({g.in.n, g.oh, g.ow, g.cout});
    const std::size_t in_stride = g.in.h * g.in.w * g.in.c;
    const std::size_t out_stride = g.rows() * g.cout;
    parallel_for(g.in.n, [&](std::size_t n) {
        std::vector<T> patches(g.rows() * g.patch_len());
        detail::im2col(input.raw() + n * in_stride, g, patches.data());
        T* dst = out.raw() + n * out_stride;
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t o = 0; o < g.cout; ++o) dst[r * g.cout + o] = bias[o];
        detail::gemm_acc(patches.data(), kernels.raw(), dst, g.rows(), g.patch_len(), g.cout);
    });
    return out;
}

template <typename T>
struct ConvGrads {
    BasicTensor<T> input;
    BasicTensor<T> kernels;
    BasicTensor<T> bias;
};

/// Gradients of sum(upstream * conv2d_valid(input, kernels, bias)).
template <typename T>
ConvGrads<T> conv2d_grads(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                          const BasicTensor<T>& upstream) {
    const auto g = detail::conv_geometry(input, kernels);
    require_shape(upstream, Shape{g.in.n, g.oh, g.ow, g.cout}, "conv2d_grads upstream");

    ConvGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(kernels.shape()), BasicTensor<T>({g.cout})};
    const std::size_t in_stride = g.in.h * g.in.w * g.in.c;
    const std::size_t out_stride = g.rows() * g.cout;
    const std::size_t klen = kernels.size();
    const auto kernels_t = detail::transpose(kernels.raw(), g.patch_len(), g.cout);

    // Per-sample kernel contributions are computed independently and summed in
    // sample order, so the result is the same for any worker count.
    constexpr std::size_t block = 32;
    std::vector<T> contrib(std::min(block, g.in.n) * klen);
    for (std::size_t start = 0; start < g.in.n; start += block) {
        const std::size_t count = std::min(block, g.in.n - start);
        std::fill(contrib.begin(), contrib.end(), T{});
        parallel_for(count, [&](std::size_t b) {
            const std::size_t n = start + b;
            const T* up = upstream.raw() + n * out_stride;
            std::vector<T> patches(g.rows() * g.patch_len());
            detail::im2col(input.raw() + n * in_stride, g, patches.data());
            detail::gemm_at_b_acc(patches.data(), up, contrib.data() + b * klen, g.rows(), g.patch_len(), g.cout);
            std::fill(patches.begin(), patches.end(), T{});
            detail::gemm_acc(up, kernels_t.data(), patches.data(), g.rows(), g.cout, g.patch_len());
            detail::col2im_acc(patches.data(), g, grads.input.raw() + n * in_stride);
        });
        for (std::size_t b = 0; b < count; ++b) {
            const T* src = contrib.data() + b * klen;
            for (std::size_t q = 0; q < klen; ++q) grads.kernels[q] += src[q];
        }
    }
    for (std::size_t r = 0; r < g.in.n * g.rows(); ++r)
        for (std::size_t o = 0; o < g.cout; ++o) grads.bias[o] += upstream[r * g.cout + o];
    return grads;
}

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    // Flat input offset of the winning element for each output element.
    std::vector<std::size_t> argmax;
};

/// Non-overlapping 2x2 max pooling, stride 2. A trailing odd row/column is
/// dropped. On ties the first element in scan order wins.
template <typename T>
PoolResult<T> maxpool2x2(const BasicTensor<T>& input) {
    const Shape4 s = Shape4::of(input.shape());
    if (s.h < 2 || s.w < 2)
        throw DimensionError("maxpool2x2: rows/cols must be >= 2, got " + std::to_string(s.h) + "x" +
                             std::to_string(s.w));
    const std::size_t oh = s.h / 2, ow = s.w / 2;
    PoolResult<T> r{BasicTensor<T>({s.n, oh, ow, s.c}), std::vector<std::size_t>(s.n * oh * ow * s.c)};
    std::size_t q = 0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t c = 0; c < s.c; ++c, ++q) {
                    std::size_t best = ((n * s.h + 2 * i) * s.w + 2 * j) * s.c + c;
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t at = ((n * s.h + 2 * i + di) * s.w + 2 * j + dj) * s.c + c;
                            if (input[at] > input[best]) best = at;
                        }
                    r.output[q] = input[best];
                    r.argmax[q] = best;
                }
    return r;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const std::vector<std::size_t>& argmax, const BasicTensor<T>& upstream,
                                   const Shape& input_shape) {
    const Shape4 s = Shape4::of(input_shape);
    require_shape(upstream, Shape{s.n, s.h / 2, s.w / 2, s.c}, "maxpool2x2_backward upstream");
    if (argmax.size() != upstream.size())
        throw DimensionError("maxpool2x2_backward: argmax map has " + std::to_string(argmax.size()) +
                             " entries, upstream has " + std::to_string(upstream.size()));
    BasicTensor<T> grad(input_shape);
    for (std::size_t q = 0; q < argmax.size(); ++q) {
        if (argmax[q] >= grad.size()) throw DimensionError("maxpool2x2_backward: argmax entry out of range");
        grad[argmax[q]] += upstream[q];
    }
    return grad;
}

} // namespace xcnn
