#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "training.hpp"

namespace xcnn {

/// Round tick positions covering [lo, hi], about `target` of them.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    if (!(hi > lo)) {
        const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
        lo -= pad;
        hi += pad;
    }
    const double raw = (hi - lo) / std::max(1, target);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> ticks;
    for (double t = std::floor(lo / step) * step; t <= hi + step * 1e-9; t += step)
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    if (ticks.front() > lo) ticks.insert(ticks.begin(), ticks.front() - step);
    if (ticks.back() < hi) ticks.push_back(ticks.back() + step);
    return ticks;
}

namespace detail {
struct Series {
    const char* label;
    const char* color;
    std::vector<double> values;
};

inline std::string fmt(const char* f, double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string chart_svg(const std::string& id, const std::string& title, const std::string& y_label,
                             const std::vector<Series>& series, double x_offset) {
    const double w = 440, h = 300, left = 60, right = 20, top = 40, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    const std::size_t n = series.front().values.size();
    double lo = series.front().values.front(), hi = lo;
    for (const auto& s : series)
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const auto yt = nice_ticks(lo, hi);
    const double y0 = yt.front(), y1 = yt.back();
    auto px = [&](double epoch) { return left + (n > 1 ? (epoch - 1.0) / double(n - 1) * pw : pw / 2.0); };
    auto py = [&](double v) { return top + ph - (v - y0) / (y1 - y0) * ph; };

    std::string s = "<g class=\"chart\" id=\"" + id + "\" transform=\"translate(" + fmt("%g", x_offset) + ",0)\">\n";
    s += "<text x=\"" + fmt("%g", left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + title +
         "</text>\n";
    s += "<rect x=\"" + fmt("%g", left) + "\" y=\"" + fmt("%g", top) + "\" width=\"" + fmt("%g", pw) +
         "\" height=\"" + fmt("%g", ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (double t : yt) {
        const std::string y = fmt("%.2f", py(t));
        s += "<line class=\"tick\" x1=\"" + fmt("%g", left - 4) + "\" x2=\"" + fmt("%g", left) + "\" y1=\"" + y +
             "\" y2=\"" + y + "\" stroke=\"#444\"/>";
        s += "<text class=\"tick-label\" x=\"" + fmt("%g", left - 6) + "\" y=\"" + y +
             "\" text-anchor=\"end\" dominant-baseline=\"middle\" font-size=\"10\">" + fmt("%g", t) + "</text>\n";
    }
    const std::size_t xstep = std::max<std::size_t>(1, (n + 9) / 10);
    for (std::size_t e = 1; e <= n; e += xstep) {
        const std::string x = fmt("%.2f", px(double(e)));
        s += "<line class=\"tick\" x1=\"" + x + "\" x2=\"" + x + "\" y1=\"" + fmt("%g", top + ph) + "\" y2=\"" +
             fmt("%g", top + ph + 4) + "\" stroke=\"#444\"/>";
        s += "<text class=\"tick-label\" x=\"" + x + "\" y=\"" + fmt("%g", top + ph + 16) +
             "\" text-anchor=\"middle\" font-size=\"10\">" + std::to_string(e) + "</text>\n";
    }
    s += "<text x=\"" + fmt("%g", left + pw / 2) + "\" y=\"" + fmt("%g", h - 8) +
         "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
    s += "<text x=\"14\" y=\"" + fmt("%g", top + ph / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " +
         fmt("%g", top + ph / 2) + ")\">" + y_label + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        s += "<polyline class=\"series\" data-series=\"" + std::string(sr.label) + "\" fill=\"none\" stroke=\"" +
             sr.color + "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < sr.values.size(); ++i) {
            if (i) s += ' ';
            s += fmt("%.2f", px(double(i + 1))) + "," + fmt("%.2f", py(sr.values[i]));
        }
        s += "\"/>\n";
        const double ly = top + 14 + 16 * double(k);
        s += "<text class=\"legend\" x=\"" + fmt("%g", left + pw - 8) + "\" y=\"" + fmt("%g", ly) +
             "\" text-anchor=\"end\" font-size=\"11\" fill=\"" + sr.color + "\">" + sr.label + "</text>\n";
    }
    return s + "</g>\n";
}
} // namespace detail

/// Two side-by-side charts (accuracy and loss), each with a train and a
/// validation series over epochs 1..N.
inline std::string render_curves_svg(const TrainingHistory& h) {
    if (h.rows.empty()) throw DataError("history is empty");
    std::vector<double> ta, va, tl, vl;
    for (const auto& r : h.rows) {
        ta.push_back(r.train_acc);
        va.push_back(r.val_acc);
        tl.push_back(r.train_loss);
        vl.push_back(r.val_loss);
    }
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"880\" height=\"300\" viewBox=\"0 0 880 300\">\n";
    s += "<rect width=\"880\" height=\"300\" fill=\"white\"/>\n";
    s += detail::chart_svg("accuracy", "Training and validation accuracy", "accuracy",
                           {{"train", "#1f77b4", ta}, {"validation", "#ff7f0e", va}}, 0);
    s += detail::chart_svg("loss", "Training and validation loss", "loss",
                           {{"train", "#1f77b4", tl}, {"validation", "#ff7f0e", vl}}, 440);
    return s + "</svg>\n";
}

inline void write_curves_svg(const TrainingHistory& h, const std::filesystem::path& path) {
    detail::write_text(path, render_curves_svg(h));
}

} // namespace xcnn
