#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "layers.hpp"
#include "loss.hpp"
#include "rng.hpp"

namespace xcnn {

struct ResolvedLayer {
    LayerDescriptor desc;
    std::string name;
    Shape input_shape;  // batch axis fixed to 1
    Shape output_shape;
};

/// Ordered layer list with every shape resolved for a single-sample input.
struct ArchitectureSpec {
    std::string id;
    Shape4 input{1, 30, 30, 1};
    std::vector<ResolvedLayer> layers;
    std::size_t parameter_count = 0;

    static ArchitectureSpec resolve(std::string id, Shape4 input, const std::vector<LayerDescriptor>& descs) {
        ArchitectureSpec spec;
        spec.id = std::move(id);
        spec.input = input;
        spec.input.n = 1;
        std::map<LayerKind, int> ordinal;
        Shape shape = spec.input.dims();
        for (const auto& d : descs) {
            ResolvedLayer layer{d, std::string(kind_name(d.kind)) + "_" + std::to_string(++ordinal[d.kind]), shape,
                                layer_output_shape(d, shape)};
            switch (d.kind) {
            case LayerKind::Conv2D:
                spec.parameter_count +=
                    d.kernel_size * d.kernel_size * shape.back() * d.filters + (d.use_bias ? d.filters : 0);
                break;
            case LayerKind::Dense: spec.parameter_count += shape.back() * d.units + (d.use_bias ? d.units : 0); break;
            case LayerKind::BatchNorm: spec.parameter_count += 2 * shape.back(); break;
            default: break;
            }
            shape = layer.output_shape;
            spec.layers.push_back(std::move(layer));
        }
        spec.validate_chain();
        return spec;
    }

    void validate_chain() const {
        Shape shape = input.dims();
        for (const auto& l : layers) {
            if (l.input_shape != shape)
                throw DimensionError("layer " + l.name + " expects " + shape_str(l.input_shape) + " but receives " +
                                     shape_str(shape));
            if (layer_output_shape(l.desc, l.input_shape) != l.output_shape)
                throw DimensionError("layer " + l.name + " has an inconsistent output shape");
            shape = l.output_shape;
        }
    }

    std::size_t count(LayerKind kind) const {
        return static_cast<std::size_t>(
            std::count_if(layers.begin(), layers.end(), [&](const auto& l) { return l.desc.kind == kind; }));
    }

    std::vector<double> dropout_rates() const {
        std::vector<double> rates;
        for (const auto& l : layers)
            if (l.desc.kind == LayerKind::Dropout) rates.push_back(l.desc.rate);
        return rates;
    }

    Shape output_shape() const { return layers.empty() ? input.dims() : layers.back().output_shape; }
};

// ---------------------------------------------------------------- builders
//
// Filter counts, dense widths and the order of blocks are reconstructions:
// only the per-kind layer counts and dropout rates are fixed.

inline ArchitectureSpec build_cnn1() {
    using L = LayerDescriptor;
    return ArchitectureSpec::resolve("cnn1", {1, 30, 30, 1},
                                     {L::conv2d(32), L::relu(), L::maxpool(), L::dropout(0.20), L::flatten(),
                                      L::dense(128), L::relu(), L::dense(2), L::softmax()});
}

inline ArchitectureSpec build_cnn3() {
    using L = LayerDescriptor;
    return ArchitectureSpec::resolve("cnn3", {1, 30, 30, 1},
                                     {L::conv2d(32), L::relu(), L::conv2d(64), L::relu(), L::maxpool(),
                                      L::dropout(0.25), L::conv2d(64), L::relu(), L::maxpool(), L::dropout(0.25),
                                      L::flatten(), L::dense(128), L::relu(), L::dropout(0.30), L::dense(2),
                                      L::softmax()});
}

// Convolutions and dense layers that feed a batch norm carry no bias; beta
// plays that role.
inline ArchitectureSpec build_cnn4() {
    using L = LayerDescriptor;
    return ArchitectureSpec::resolve(
        "cnn4", {1, 30, 30, 1},
        {L::conv2d(32, 3, false), L::batchnorm(), L::relu(), L::conv2d(32, 3, false), L::batchnorm(), L::relu(),
         L::maxpool(), L::dropout(0.25), L::conv2d(64, 3, false), L::batchnorm(), L::relu(),
         L::conv2d(64, 3, false), L::batchnorm(), L::relu(), L::maxpool(), L::dropout(0.25), L::flatten(),
         L::dense(256, false), L::batchnorm(), L::relu(), L::dropout(0.25), L::dense(128, false), L::batchnorm(),
         L::relu(), L::dropout(0.40), L::dense(64), L::relu(), L::dropout(0.30),
         L::dense(2), L::softmax()});
}

inline constexpr std::array<std::string_view, 3> kArchitectureIds{"cnn1", "cnn3", "cnn4"};

inline ArchitectureSpec build_architecture(std::string_view id) {
    if (id == "cnn1") return build_cnn1();
    if (id == "cnn3") return build_cnn3();
    if (id == "cnn4") return build_cnn4();
    throw ParameterError("unknown architecture '" + std::string(id) + "' (valid: cnn1, cnn3, cnn4)");
}

// ---------------------------------------------------------------- network

struct ParamRef {
    std::string name; // "<layer>.<param>"
    Tensor* value;
    Tensor* grad;
};

struct NamedTensor {
    std::string name;
    const Tensor* tensor;
};

/// An architecture with its parameters, running statistics and caches.
class Network {
public:
    Network() = default;

    Network(ArchitectureSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
        states_.reserve(spec_.layers.size());
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            Rng rng = Rng::derive(seed, {Rng::tag("init"), i});
            states_.push_back(init_layer(spec_.layers[i].desc, spec_.layers[i].input_shape, rng));
        }
    }

    const ArchitectureSpec& spec() const { return spec_; }
    std::size_t size() const { return states_.size(); }
    LayerState& state(std::size_t i) { return states_.at(i); }
    const LayerState& state(std::size_t i) const { return states_.at(i); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t epoch() const { return epoch_; }
    void set_epoch(std::uint64_t e) { epoch_ = e; }

    bool has_batchnorm() const { return spec_.count(LayerKind::BatchNorm) > 0; }

    Tensor forward(const Tensor& x, ForwardContext ctx) { return forward_range(x, ctx, 0); }

    /// Runs layers [begin, end) where x is the input of layer `begin`.
    Tensor forward_range(const Tensor& x, ForwardContext ctx, std::size_t begin,
                         std::size_t end = static_cast<std::size_t>(-1)) {
        end = std::min(end, states_.size());
        if (begin < states_.size()) {
            Shape expected = spec_.layers[begin].input_shape;
            expected[0] = x.rank() ? x.dim(0) : 0;
            require_shape(x, expected, ("input of " + spec_.layers[begin].name).c_str());
        }
        Tensor act = x;
        for (std::size_t i = begin; i < end; ++i) {
            ctx.layer_index = i;
            act = layer_forward(spec_.layers[i].desc, states_[i], act, ctx);
        }
        return act;
    }

    Tensor backward(const Tensor& upstream) { return backward_range(upstream, states_.size()); }

    /// Backward through layers [0, end) given the gradient of layer end-1's output.
    Tensor backward_range(const Tensor& upstream, std::size_t end) {
        Tensor g = upstream;
        for (std::size_t i = end; i-- > 0;) g = layer_backward(spec_.layers[i].desc, states_[i], g);
        return g;
    }

    /// Skips the trailing softmax and starts from the gradient of its logits.
    Tensor backward_from_logits(const Tensor& logit_grad) {
        if (states_.empty() || spec_.layers.back().desc.kind != LayerKind::Softmax)
            throw StateError("backward_from_logits requires a trailing softmax layer");
        return backward_range(logit_grad, states_.size() - 1);
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> refs;
        for (std::size_t i = 0; i < states_.size(); ++i)
            for (auto& p : states_[i].params) refs.push_back({spec_.layers[i].name + "." + p.name, &p.value, &p.grad});
        return refs;
    }

    /// Every persistent tensor: parameters, then running statistics.
    std::vector<NamedTensor> persistent_tensors() const {
        std::vector<NamedTensor> out;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            const auto& name = spec_.layers[i].name;
            for (const auto& p : states_[i].params) out.push_back({name + "." + p.name, &p.value});
            if (spec_.layers[i].desc.kind == LayerKind::BatchNorm) {
                out.push_back({name + ".running_mean", &states_[i].running_mean});
                out.push_back({name + ".running_var", &states_[i].running_var});
            }
        }
        return out;
    }

    Tensor* find_persistent(std::string_view qualified) {
        for (const auto& nt : persistent_tensors())
            if (nt.name == qualified) return const_cast<Tensor*>(nt.tensor);
        return nullptr;
    }

private:
    ArchitectureSpec spec_;
    std::vector<LayerState> states_;
    std::uint64_t seed_ = 0;
    std::uint64_t epoch_ = 0;
};

inline Network make_network(std::string_view arch_id, std::uint64_t seed) {
    return Network(build_architecture(arch_id), seed);
}

/// Infer-mode class probabilities for a batch.
inline Tensor predict_proba(Network& net, const Tensor& x) {
    ForwardContext ctx;
    ctx.mode = Mode::Infer;
    return net.forward(x, ctx);
}

} // namespace xcnn
