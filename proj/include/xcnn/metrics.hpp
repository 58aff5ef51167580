#pragma once

#include <cstdio>
#include <span>
#include <string>

#include "error.hpp"

namespace xcnn {

/// Binary confusion counts and scores with class `positive` as the positive
/// class. Undefined ratios are reported as 0.
struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

    std::size_t total() const { return tp + fp + fn + tn; }
};

struct MacroScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

namespace detail {
inline double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline void finish_scores(Metrics& m) {
    m.accuracy = ratio(m.tp + m.tn, m.total());
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    const double pr = m.precision + m.recall;
    m.f1 = pr == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / pr;
}
} // namespace detail

inline Metrics confusion_and_scores(std::span<const int> predicted, std::span<const int> truth, int positive = 0) {
    if (predicted.size() != truth.size())
        throw DataError("confusion_and_scores: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(truth.size()) + " labels");
    if (predicted.empty()) throw DataError("confusion_and_scores: no samples");
    Metrics m;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i], t = truth[i];
        if ((p != 0 && p != 1) || (t != 0 && t != 1))
            throw DataError("confusion_and_scores: class indices must be 0 or 1");
        const bool pp = p == positive, tp = t == positive;
        if (pp && tp) ++m.tp;
        else if (pp) ++m.fp;
        else if (tp) ++m.fn;
        else ++m.tn;
    }
    detail::finish_scores(m);
    return m;
}

/// Unweighted mean of the per-class scores, each class taken as positive in turn.
inline MacroScores macro_scores(std::span<const int> predicted, std::span<const int> truth) {
    const Metrics a = confusion_and_scores(predicted, truth, 0);
    const Metrics b = confusion_and_scores(predicted, truth, 1);
    return {(a.precision + b.precision) / 2.0, (a.recall + b.recall) / 2.0, (a.f1 + b.f1) / 2.0};
}

/// Human-readable block, one "name value" pair per line.
inline std::string format_metrics(const Metrics& m) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "samples   %zu\ntp %zu  fp %zu  fn %zu  tn %zu\naccuracy  %.4f\nprecision %.4f\nrecall    %.4f\n"
                  "f1        %.4f\n",
                  m.total(), m.tp, m.fp, m.fn, m.tn, m.accuracy, m.precision, m.recall, m.f1);
    return buf;
}

} // namespace xcnn
