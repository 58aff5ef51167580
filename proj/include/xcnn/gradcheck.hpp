#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "loss.hpp"
#include "model.hpp"

namespace xcnn {

struct GradCheckOptions {
    double perturbation = 1e-5;
    double tolerance = 1e-4;
    // 0 probes every element; otherwise a seeded sample of this many per
    // tensor, always including the element with the largest analytic gradient.
    std::size_t max_probes_per_tensor = 0;
    std::uint64_t seed = 0;
    Mode mode = Mode::Train;
    // Negative control: scale one analytic gradient element of this tensor.
    std::optional<std::string> corrupt;
    double corrupt_factor = 1.1;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t probes = 0;
    // Probes whose +h and -h passes landed on different sides of a ReLU or
    // max-pool switch; the loss is not differentiable there.
    std::size_t skipped = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    bool passed() const {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
    }
    double max_rel_err() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_err);
        return m;
    }
    /// One "layer.param max_rel_err PASS|FAIL" line per tensor.
    std::string format() const {
        std::string out;
        char buf[64];
        for (const auto& e : entries) {
            std::snprintf(buf, sizeof buf, " %.3e ", e.max_rel_err);
            out += e.name + buf + (e.pass ? "PASS" : "FAIL") + "\n";
        }
        return out;
    }
};

namespace detail {
// Hash of every ReLU sign pattern and pooling choice from layer `begin` on.
inline std::uint64_t switch_pattern(const Network& net, std::size_t begin) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
    for (std::size_t i = begin; i < net.size(); ++i) {
        const auto kind = net.spec().layers[i].desc.kind;
        const auto& cache = net.state(i).cache;
        if (kind == LayerKind::ReLU)
            for (double v : cache.input.data()) feed(v > 0.0);
        else if (kind == LayerKind::MaxPool2x2)
            for (auto a : cache.argmax) feed(a);
    }
    return h;
}
} // namespace detail

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares backpropagated parameter gradients of the mean cross-entropy
/// against central differences. Works on a copy; `network` is not modified.
/// Dropout masks are fixed by the context seed, so every pass sees the same
/// subnetwork.
inline GradCheckReport gradient_check(const Network& network, const Tensor& input, const Tensor& labels,
                                      const GradCheckOptions& opts = {}) {
    Network net = network;
    const std::size_t batch = input.dim(0);
    std::vector<std::uint64_t> ids(batch);
    std::iota(ids.begin(), ids.end(), 0);
    ForwardContext ctx;
    ctx.mode = opts.mode;
    ctx.seed = opts.seed;
    ctx.sample_ids = ids;

    const std::size_t layers = net.size();
    std::vector<Tensor> acts(layers + 1);
    acts[0] = input;
    for (std::size_t i = 0; i < layers; ++i) acts[i + 1] = net.forward_range(acts[i], ctx, i, i + 1);

    auto loss_of = [&](const Tensor& probs) {
        const double l = cross_entropy(probs, labels).mean;
        if (!std::isfinite(l)) throw NumericError("gradient check: non-finite loss");
        return l;
    };
    loss_of(acts[layers]);
    net.backward_from_logits(softmax_xent_grad(acts[layers], labels));

    GradCheckReport report;
    for (std::size_t i = 0; i < layers; ++i) {
        auto& state = net.state(i);
        for (auto& p : state.params) {
            GradCheckEntry entry{net.spec().layers[i].name + "." + p.name};
            Tensor analytic = p.grad;
            std::size_t top = 0;
            for (std::size_t q = 1; q < analytic.size(); ++q)
                if (std::abs(analytic[q]) > std::abs(analytic[top])) top = q;
            if (opts.corrupt && *opts.corrupt == entry.name) analytic[top] *= opts.corrupt_factor;

            std::vector<std::size_t> probes(analytic.size());
            std::iota(probes.begin(), probes.end(), 0);
            if (opts.max_probes_per_tensor && probes.size() > opts.max_probes_per_tensor) {
                std::swap(probes[0], probes[top]);
                Rng rng = Rng::derive(opts.seed, {Rng::tag("gradcheck"), i, Rng::tag(p.name)});
                for (std::size_t k = 1; k < opts.max_probes_per_tensor; ++k) {
                    const std::size_t j = k + static_cast<std::size_t>(rng.below(probes.size() - k));
                    std::swap(probes[k], probes[j]);
                }
                probes.resize(opts.max_probes_per_tensor);
            }

            for (std::size_t q : probes) {
                const double saved = p.value[q];
                p.value[q] = saved + opts.perturbation;
                const double up = loss_of(net.forward_range(acts[i], ctx, i));
                const auto up_pattern = detail::switch_pattern(net, i);
                p.value[q] = saved - opts.perturbation;
                const double down = loss_of(net.forward_range(acts[i], ctx, i));
                const auto down_pattern = detail::switch_pattern(net, i);
                p.value[q] = saved;
                if (up_pattern != down_pattern) {
                    ++entry.skipped;
                    continue;
                }
                const double numeric = (up - down) / (2.0 * opts.perturbation);
                entry.max_rel_err = std::max(entry.max_rel_err, relative_error(analytic[q], numeric));
            }
            entry.probes = probes.size();
            entry.pass = entry.max_rel_err < opts.tolerance;
            report.entries.push_back(std::move(entry));
        }
    }
    return report;
}

} // namespace xcnn
