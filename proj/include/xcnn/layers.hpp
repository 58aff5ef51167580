#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kernels.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace xcnn {

enum class LayerKind { Conv2D, MaxPool2x2, ReLU, Dropout, BatchNorm, Flatten, Dense, Softmax };

enum class Mode { Train, Infer };

inline const char* kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2x2: return "maxpool";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
    }
    return "unknown";
}

/// One layer of an architecture plus its kind-specific hyperparameters.
struct LayerDescriptor {
    LayerKind kind = LayerKind::ReLU;
    std::size_t filters = 0;     // Conv2D
    std::size_t kernel_size = 3; // Conv2D, square
    double rate = 0.0;           // Dropout
    std::size_t units = 0;       // Dense
    bool use_bias = true;        // Conv2D, Dense
    double momentum = 0.99;      // BatchNorm
    double epsilon = 1e-3;       // BatchNorm

    static LayerDescriptor conv2d(std::size_t filters, std::size_t kernel_size = 3, bool use_bias = true) {
        LayerDescriptor d{LayerKind::Conv2D};
        d.filters = filters;
        d.kernel_size = kernel_size;
        d.use_bias = use_bias;
        return d;
    }
    static LayerDescriptor maxpool() { return {LayerKind::MaxPool2x2}; }
    static LayerDescriptor relu() { return {LayerKind::ReLU}; }
    static LayerDescriptor dropout(double rate) {
        LayerDescriptor d{LayerKind::Dropout};
        d.rate = rate;
        return d;
    }
    static LayerDescriptor batchnorm(double momentum = 0.99, double epsilon = 1e-3) {
        LayerDescriptor d{LayerKind::BatchNorm};
        d.momentum = momentum;
        d.epsilon = epsilon;
        return d;
    }
    static LayerDescriptor flatten() { return {LayerKind::Flatten}; }
    static LayerDescriptor dense(std::size_t units, bool use_bias = true) {
        LayerDescriptor d{LayerKind::Dense};
        d.units = units;
        d.use_bias = use_bias;
        return d;
    }
    static LayerDescriptor softmax() { return {LayerKind::Softmax}; }

    void validate() const {
        switch (kind) {
        case LayerKind::Conv2D:
            if (filters < 1) throw ParameterError("Conv2D needs at least one filter");
            if (kernel_size < 1) throw ParameterError("Conv2D kernel size must be positive");
            break;
        case LayerKind::Dropout:
            if (!(rate >= 0.0 && rate < 1.0))
                throw ParameterError("Dropout rate must lie in [0, 1), got " + std::to_string(rate));
            break;
        case LayerKind::Dense:
            if (units < 1) throw ParameterError("Dense needs at least one unit");
            break;
        case LayerKind::BatchNorm:
            if (!(momentum >= 0.0 && momentum <= 1.0)) throw ParameterError("BatchNorm momentum must lie in [0, 1]");
            if (!(epsilon > 0.0)) throw ParameterError("BatchNorm epsilon must be positive");
            break;
        default: break;
        }
    }

    bool has_params() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::Dense || kind == LayerKind::BatchNorm;
    }
};

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Values saved by forward for the matching backward call.
struct LayerCache {
    bool ready = false;
    Mode mode = Mode::Infer;
    Shape input_shape;
    Tensor input;  // Conv2D, Dense, ReLU
    Tensor aux;    // Dropout scaled mask, BatchNorm normalized input, Softmax output
    std::vector<std::size_t> argmax;
    std::vector<double> inv_std;
};

struct LayerState {
    std::vector<Param> params;
    Tensor running_mean;
    Tensor running_var;
    LayerCache cache;

    Param& param(std::string_view name) {
        for (auto& p : params)
            if (p.name == name) return p;
        throw StateError("layer has no parameter named " + std::string(name));
    }
    const Param& param(std::string_view name) const { return const_cast<LayerState*>(this)->param(name); }
    Param* find_param(std::string_view name) {
        for (auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
};

/// Per-call context. Dropout draws for sample n in layer l come from the
/// stream derived from (seed, epoch, sample_ids[n], l).
struct ForwardContext {
    Mode mode = Mode::Infer;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::span<const std::uint64_t> sample_ids;
    std::size_t layer_index = 0;
};

// ---------------------------------------------------------------- ReLU

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Passes upstream where x > 0; the subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    require_shape(upstream, x.shape(), "relu_backward upstream");
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return g;
}

// ---------------------------------------------------------------- Softmax

inline Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(1) < 2)
        throw DimensionError("softmax expects (n, k) logits with k >= 2, got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.raw() + r * k;
        double* out = p.raw() + r * k;
        const double top = *std::max_element(row, row + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += out[j] = std::exp(row[j] - top);
        for (std::size_t j = 0; j < k; ++j) out[j] /= total;
    }
    return p;
}

// Jacobian-vector product of softmax given its output.
inline Tensor softmax_backward(const Tensor& probs, const Tensor& upstream) {
    require_shape(upstream, probs.shape(), "softmax_backward upstream");
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    Tensor g(probs.shape());
    for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += upstream[r * k + j] * probs[r * k + j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] = probs[r * k + j] * (upstream[r * k + j] - dot);
    }
    return g;
}

// ---------------------------------------------------------------- Dropout

struct DropoutResult {
    Tensor output;
    Tensor mask; // 0 or 1/(1-rate); all ones in Infer mode
};

/// Inverted dropout. stream_for(n) returns the generator used for sample n;
/// elements of a sample are drawn in row-major order.
template <typename StreamFor>
DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, StreamFor&& stream_for) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    DropoutResult r{x, Tensor(x.shape(), 1.0)};
    if (mode == Mode::Infer || rate == 0.0 || x.empty()) return r;
    const double keep_scale = 1.0 / (1.0 - rate);
    const std::size_t per_sample = x.size() / x.dim(0);
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        Rng& rng = stream_for(n);
        for (std::size_t i = n * per_sample; i < (n + 1) * per_sample; ++i) {
            const double m = rng.uniform() < rate ? 0.0 : keep_scale;
            r.mask[i] = m;
            r.output[i] = x[i] * m;
        }
    }
    return r;
}

inline DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, Rng& rng) {
    return dropout_forward(x, rate, mode, [&](std::size_t) -> Rng& { return rng; });
}

inline Tensor dropout_backward(const Tensor& mask, const Tensor& upstream) {
    require_shape(upstream, mask.shape(), "dropout_backward upstream");
    Tensor g(mask.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * mask[i];
    return g;
}

// ---------------------------------------------------------------- BatchNorm

/// Creates gamma=1, beta=0, running mean 0 and running variance 1 over the
/// last axis.
inline LayerState batchnorm_state(std::size_t channels) {
    LayerState s;
    s.params.push_back({"gamma", Tensor({channels}, 1.0), Tensor({channels})});
    s.params.push_back({"beta", Tensor({channels}, 0.0), Tensor({channels})});
    s.running_mean = Tensor({channels}, 0.0);
    s.running_var = Tensor({channels}, 1.0);
    return s;
}

/// Normalizes over every axis but the last. Train mode uses batch statistics
/// and updates the running ones; Infer mode uses the running statistics.
inline Tensor batchnorm_forward(const Tensor& x, LayerState& state, Mode mode, double momentum = 0.99,
                                double epsilon = 1e-3) {
    if (x.rank() != 2 && x.rank() != 4)
        throw DimensionError("batchnorm expects (n, f) or (n, h, w, c) input, got " + shape_str(x.shape()));
    const std::size_t c = x.shape().back();
    const std::size_t m = x.size() / c;
    const Tensor& gamma = state.param("gamma").value;
    const Tensor& beta = state.param("beta").value;
    require_shape(gamma, Shape{c}, "batchnorm gamma");
    require_shape(state.running_mean, Shape{c}, "batchnorm running mean");

    LayerCache& cache = state.cache;
    cache.mode = mode;
    cache.input_shape = x.shape();
    cache.aux = Tensor(x.shape());
    cache.inv_std.assign(c, 0.0);
    Tensor y(x.shape());

    if (mode == Mode::Train) {
        if (m < 2)
            throw ParameterError("batchnorm in Train mode needs at least 2 values per channel, got " +
                                 std::to_string(m));
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[i * c + ch];
        for (auto& v : mean) v /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double d = x[i * c + ch] - mean[ch];
                var[ch] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(m);
        for (std::size_t ch = 0; ch < c; ++ch) {
            cache.inv_std[ch] = 1.0 / std::sqrt(var[ch] + epsilon);
            state.running_mean[ch] = momentum * state.running_mean[ch] + (1.0 - momentum) * mean[ch];
            state.running_var[ch] = momentum * state.running_var[ch] + (1.0 - momentum) * var[ch];
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double xh = (x[i * c + ch] - mean[ch]) * cache.inv_std[ch];
                cache.aux[i * c + ch] = xh;
                y[i * c + ch] = gamma[ch] * xh + beta[ch];
            }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch)
            cache.inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + epsilon);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double xh = (x[i * c + ch] - state.running_mean[ch]) * cache.inv_std[ch];
                cache.aux[i * c + ch] = xh;
                y[i * c + ch] = gamma[ch] * xh + beta[ch];
            }
    }
    cache.ready = true;
    return y;
}

/// Writes gamma/beta gradients into state and returns the input gradient.
/// After a Train forward this is the full chain rule through the batch mean
/// and variance.
inline Tensor batchnorm_backward(LayerState& state, const Tensor& upstream) {
    LayerCache& cache = state.cache;
    if (!cache.ready) throw StateError("batchnorm backward called before forward");
    require_shape(upstream, cache.input_shape, "batchnorm_backward upstream");
    const std::size_t c = cache.input_shape.back();
    const std::size_t m = upstream.size() / c;
    const Tensor& gamma = state.param("gamma").value;
    Tensor& dgamma = state.param("gamma").grad;
    Tensor& dbeta = state.param("beta").grad;
    const Tensor& xh = cache.aux;

    std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            sum_dy[ch] += upstream[i * c + ch];
            sum_dy_xh[ch] += upstream[i * c + ch] * xh[i * c + ch];
        }
    for (std::size_t ch = 0; ch < c; ++ch) {
        dgamma[ch] = sum_dy_xh[ch];
        dbeta[ch] = sum_dy[ch];
    }

    Tensor dx(cache.input_shape);
    if (cache.mode == Mode::Train) {
        const double md = static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double scale = gamma[ch] * cache.inv_std[ch] / md;
                dx[i * c + ch] =
                    scale * (md * upstream[i * c + ch] - sum_dy[ch] - xh[i * c + ch] * sum_dy_xh[ch]);
            }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
                dx[i * c + ch] = upstream[i * c + ch] * gamma[ch] * cache.inv_std[ch];
    }
    return dx;
}

// ---------------------------------------------------------------- Dense

inline Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    if (x.rank() != 2 || weights.rank() != 2)
        throw DimensionError("dense expects (n, f) input and (f, u) weights, got " + shape_str(x.shape()) + " and " +
                             shape_str(weights.shape()));
    if (x.dim(1) != weights.dim(0))
        throw DimensionError("dense: input feature axis (" + std::to_string(x.dim(1)) +
                             ") does not match weight rows (" + std::to_string(weights.dim(0)) + ")");
    require_shape(bias, Shape{weights.dim(1)}, "dense bias");
    Tensor y({x.dim(0), weights.dim(1)});
    for (std::size_t r = 0; r < x.dim(0); ++r)
        std::copy(bias.data().begin(), bias.data().end(), y.raw() + r * weights.dim(1));
    detail::gemm_acc(x.raw(), weights.raw(), y.raw(), x.dim(0), x.dim(1), weights.dim(1));
    return y;
}

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& upstream) {
    require_shape(upstream, Shape{x.dim(0), weights.dim(1)}, "dense_backward upstream");
    DenseGrads g{matmul_a_bt(upstream, weights), matmul_at_b(x, upstream), Tensor({weights.dim(1)})};
    for (std::size_t r = 0; r < upstream.dim(0); ++r)
        for (std::size_t u = 0; u < weights.dim(1); ++u) g.bias[u] += upstream[r * weights.dim(1) + u];
    return g;
}

// ---------------------------------------------------------------- Flatten

inline Tensor flatten(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("flatten needs a batch axis");
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

// ---------------------------------------------------------------- dispatch

/// Output shape of a layer for a given input shape (batch axis included).
inline Shape layer_output_shape(const LayerDescriptor& d, const Shape& in) {
    d.validate();
    auto need_rank = [&](std::size_t r) {
        if (in.size() != r)
            throw DimensionError(std::string(kind_name(d.kind)) + " expects rank " + std::to_string(r) +
                                 " input, got " + shape_str(in));
    };
    switch (d.kind) {
    case LayerKind::Conv2D:
        need_rank(4);
        if (in[1] < d.kernel_size || in[2] < d.kernel_size)
            throw DimensionError("conv2d kernel larger than input " + shape_str(in));
        return {in[0], in[1] - d.kernel_size + 1, in[2] - d.kernel_size + 1, d.filters};
    case LayerKind::MaxPool2x2:
        need_rank(4);
        if (in[1] < 2 || in[2] < 2) throw DimensionError("maxpool input too small: " + shape_str(in));
        return {in[0], in[1] / 2, in[2] / 2, in[3]};
    case LayerKind::Flatten: return {in[0], shape_size(in) / in[0]};
    case LayerKind::Dense: need_rank(2); return {in[0], d.units};
    case LayerKind::Softmax:
        need_rank(2);
        if (in[1] < 2) throw DimensionError("softmax needs at least two classes");
        return in;
    case LayerKind::BatchNorm:
        if (in.size() != 2 && in.size() != 4)
            throw DimensionError("batchnorm expects rank 2 or 4 input, got " + shape_str(in));
        return in;
    default: return in;
    }
}

/// Glorot-uniform weights, zero biases, gamma 1, beta 0. Layers built with
/// use_bias = false get no bias parameter.
inline LayerState init_layer(const LayerDescriptor& d, const Shape& in, Rng& rng) {
    auto glorot = [&](Shape shape, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = rng.uniform(-limit, limit);
        return t;
    };
    LayerState s;
    switch (d.kind) {
    case LayerKind::Conv2D: {
        const std::size_t k = d.kernel_size, cin = in.back();
        Shape ks{k, k, cin, d.filters};
        s.params.push_back({"kernels", glorot(ks, double(k * k * cin), double(k * k * d.filters)), Tensor(ks)});
        if (d.use_bias) s.params.push_back({"bias", Tensor({d.filters}), Tensor({d.filters})});
        break;
    }
    case LayerKind::Dense: {
        const std::size_t f = in.back();
        s.params.push_back({"weights", glorot({f, d.units}, double(f), double(d.units)), Tensor({f, d.units})});
        if (d.use_bias) s.params.push_back({"bias", Tensor({d.units}), Tensor({d.units})});
        break;
    }
    case LayerKind::BatchNorm: s = batchnorm_state(in.back()); break;
    default: break;
    }
    return s;
}

namespace detail {
inline Tensor bias_or_zero(LayerState& s, std::size_t width) {
    if (const Param* b = s.find_param("bias")) return b->value;
    return Tensor({width});
}
inline void store_bias_grad(LayerState& s, Tensor&& g) {
    if (Param* b = s.find_param("bias")) b->grad = std::move(g);
}
} // namespace detail

inline Tensor layer_forward(const LayerDescriptor& d, LayerState& s, const Tensor& x, const ForwardContext& ctx) {
    LayerCache& cache = s.cache;
    cache.input_shape = x.shape();
    cache.mode = ctx.mode;
    Tensor y;
    switch (d.kind) {
    case LayerKind::Conv2D:
        y = conv2d_valid(x, s.param("kernels").value, detail::bias_or_zero(s, d.filters));
        cache.input = x;
        break;
    case LayerKind::MaxPool2x2: {
        auto r = maxpool2x2(x);
        cache.argmax = std::move(r.argmax);
        y = std::move(r.output);
        break;
    }
    case LayerKind::ReLU:
        y = relu(x);
        cache.input = x;
        break;
    case LayerKind::Dropout: {
        if (ctx.mode == Mode::Train && !ctx.sample_ids.empty() && ctx.sample_ids.size() != x.dim(0))
            throw DimensionError("dropout: " + std::to_string(ctx.sample_ids.size()) + " sample ids for a batch of " +
                                 std::to_string(x.dim(0)));
        Rng current(0);
        auto stream_for = [&](std::size_t n) -> Rng& {
            const std::uint64_t id = ctx.sample_ids.empty() ? n : ctx.sample_ids[n];
            current = Rng::derive(ctx.seed, {Rng::tag("dropout"), ctx.epoch, id, ctx.layer_index});
            return current;
        };
        auto r = dropout_forward(x, d.rate, ctx.mode, stream_for);
        cache.aux = std::move(r.mask);
        y = std::move(r.output);
        break;
    }
    case LayerKind::BatchNorm: y = batchnorm_forward(x, s, ctx.mode, d.momentum, d.epsilon); break;
    case LayerKind::Flatten: y = flatten(x); break;
    case LayerKind::Dense:
        y = dense_forward(x, s.param("weights").value, detail::bias_or_zero(s, d.units));
        cache.input = x;
        break;
    case LayerKind::Softmax:
        y = softmax(x);
        cache.aux = y;
        break;
    }
    cache.ready = true;
    return y;
}

inline Tensor layer_backward(const LayerDescriptor& d, LayerState& s, const Tensor& upstream) {
    LayerCache& cache = s.cache;
    if (!cache.ready) throw StateError(std::string(kind_name(d.kind)) + " backward called before forward");
    switch (d.kind) {
    case LayerKind::Conv2D: {
        auto g = conv2d_grads(cache.input, s.param("kernels").value, upstream);
        s.param("kernels").grad = std::move(g.kernels);
        detail::store_bias_grad(s, std::move(g.bias));
        return std::move(g.input);
    }
    case LayerKind::MaxPool2x2: return maxpool2x2_backward(cache.argmax, upstream, cache.input_shape);
    case LayerKind::ReLU: return relu_backward(cache.input, upstream);
    case LayerKind::Dropout: return dropout_backward(cache.aux, upstream);
    case LayerKind::BatchNorm: return batchnorm_backward(s, upstream);
    case LayerKind::Flatten:
        if (upstream.size() != shape_size(cache.input_shape))
            throw DimensionError("flatten backward: upstream has " + std::to_string(upstream.size()) +
                                 " values for input shape " + shape_str(cache.input_shape));
        return upstream.reshaped(cache.input_shape);
    case LayerKind::Dense: {
        auto g = dense_backward(cache.input, s.param("weights").value, upstream);
        s.param("weights").grad = std::move(g.weights);
        detail::store_bias_grad(s, std::move(g.bias));
        return std::move(g.input);
    }
    case LayerKind::Softmax: return softmax_backward(cache.aux, upstream);
    }
    throw StateError("unknown layer kind");
}

} // namespace xcnn
