#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace xcnn {

struct LossValue {
    double mean = 0.0;
    std::vector<double> per_sample;
};

inline constexpr double kProbabilityFloor = 1e-12;

inline Tensor one_hot(std::span<const int> classes, std::size_t num_classes = 2) {
    Tensor t({classes.size(), num_classes});
    for (std::size_t r = 0; r < classes.size(); ++r) {
        if (classes[r] < 0 || static_cast<std::size_t>(classes[r]) >= num_classes)
            throw DataError("class index " + std::to_string(classes[r]) + " out of range");
        t[r * num_classes + static_cast<std::size_t>(classes[r])] = 1.0;
    }
    return t;
}

namespace detail {
inline void check_targets(const Tensor& probs, const Tensor& labels) {
    if (probs.rank() != 2) throw DimensionError("expected (n, k) probabilities, got " + shape_str(probs.shape()));
    require_shape(labels, probs.shape(), "labels");
    const std::size_t k = labels.dim(1);
    for (std::size_t r = 0; r < labels.dim(0); ++r) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = labels[r * k + j];
            if (v == 1.0) ++ones;
            else if (v != 0.0) {
                ones = 2;
                break;
            }
        }
        if (ones != 1) throw DataError("label row " + std::to_string(r) + " is not one-hot");
    }
}
} // namespace detail

/// Categorical cross-entropy with one-hot targets; probabilities are clamped
/// to [1e-12, 1] before the log.
inline LossValue cross_entropy(const Tensor& probs, const Tensor& labels) {
    detail::check_targets(probs, labels);
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    LossValue loss;
    loss.per_sample.resize(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double l = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            if (labels[r * k + j] != 0.0)
                l -= labels[r * k + j] * std::log(std::clamp(probs[r * k + j], kProbabilityFloor, 1.0));
        loss.per_sample[r] = l;
        total += l;
    }
    loss.mean = n ? total / static_cast<double>(n) : 0.0;
    return loss;
}

/// Gradient of the mean cross-entropy with respect to the softmax logits.
inline Tensor softmax_xent_grad(const Tensor& probs, const Tensor& labels) {
    detail::check_targets(probs, labels);
    const double n = static_cast<double>(probs.dim(0));
    Tensor g(probs.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (probs[i] - labels[i]) / n;
    return g;
}

} // namespace xcnn
