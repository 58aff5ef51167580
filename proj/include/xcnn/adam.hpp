#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace xcnn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// One bias-corrected Adam update over a list of parameter tensors. Moment
/// buffers are created lazily on the first step.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state) {
    if (params.size() != grads.size())
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                             std::to_string(grads.size()) + " gradients");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw DimensionError("adam_step: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_shape(*grads[i], params[i]->shape(), "adam_step gradient");
        require_shape(state.m[i], params[i]->shape(), "adam_step moment");
    }

    ++state.t;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t q = 0; q < p.size(); ++q) {
            m[q] = c.beta1 * m[q] + (1.0 - c.beta1) * g[q];
            v[q] = c.beta2 * v[q] + (1.0 - c.beta2) * g[q] * g[q];
            const double m_hat = m[q] / bc1;
            const double v_hat = v[q] / bc2;
            p[q] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

} // namespace xcnn
