#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "image_io.hpp"
#include "image_ops.hpp"
#include "rng.hpp"
#include "training.hpp"

namespace xcnn {

struct SyntheticSample {
    Tensor image; // (30, 30, 1) in [0, 1]
    Label label;
};

/// Mid-gray noisy background with one square: bright for COVID, dark for Normal.
inline std::vector<SyntheticSample> square_task(std::size_t per_class, std::uint64_t seed) {
    std::vector<SyntheticSample> out;
    for (Label label : kLabels)
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng rng = Rng::derive(seed, {Rng::tag("square"), std::uint64_t(class_index(label)), i});
            Tensor img({kImageSize, kImageSize, 1});
            for (auto& v : img.data()) v = rng.uniform(0.4, 0.6);
            const std::size_t side = 8 + rng.below(5);
            const std::size_t r0 = rng.below(kImageSize - side + 1), c0 = rng.below(kImageSize - side + 1);
            for (std::size_t r = r0; r < r0 + side; ++r)
                for (std::size_t c = c0; c < c0 + side; ++c)
                    img.at({r, c, 0}) = label == Label::COVID ? rng.uniform(0.85, 1.0) : rng.uniform(0.0, 0.15);
            out.push_back({std::move(img), label});
        }
    return out;
}

/// Gaussian pixel noise; COVID images also carry a faint Gaussian blob at a
/// random position.
inline std::vector<SyntheticSample> blob_task(std::size_t covid, std::size_t normal, std::uint64_t seed,
                                              double amplitude = 0.3, double noise = 0.15) {
    std::vector<SyntheticSample> out;
    for (Label label : kLabels) {
        const std::size_t n = label == Label::COVID ? covid : normal;
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = Rng::derive(seed, {Rng::tag("blob"), std::uint64_t(class_index(label)), i});
            Tensor img({kImageSize, kImageSize, 1});
            for (auto& v : img.data()) v = 0.4 + noise * rng.normal();
            if (label == Label::COVID) {
                const double cy = rng.uniform(8.0, 21.0), cx = rng.uniform(8.0, 21.0);
                for (std::size_t r = 0; r < kImageSize; ++r)
                    for (std::size_t c = 0; c < kImageSize; ++c) {
                        const double d2 = (double(r) - cy) * (double(r) - cy) + (double(c) - cx) * (double(c) - cx);
                        img.at({r, c, 0}) += amplitude * std::exp(-d2 / (2.0 * 3.0 * 3.0));
                    }
            }
            for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
            out.push_back({std::move(img), label});
        }
    }
    return out;
}

inline std::string synthetic_path(const SyntheticSample& s, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s/img_%05zu.png", std::string(label_name(s.label)).c_str(), index);
    return buf;
}

/// Stratified split of the samples into an in-memory dataset.
inline LoadedDataset in_memory_dataset(const std::vector<SyntheticSample>& samples, std::uint64_t seed) {
    std::vector<LabeledPath> items;
    LoadedDataset data;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string path = synthetic_path(samples[i], i);
        items.push_back({path, samples[i].label});
        data.images.emplace(path, samples[i].image);
    }
    data.manifest = split_dataset(std::move(items), seed);
    return data;
}

/// Writes root/COVID/*.png and root/Normal/*.png.
inline void write_synthetic_dataset(const std::filesystem::path& root, const std::vector<SyntheticSample>& samples) {
    for (Label l : kLabels) std::filesystem::create_directories(root / std::string(label_name(l)));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Tensor scaled = samples[i].image;
        for (auto& v : scaled.data()) v *= 255.0;
        save_png(root / synthetic_path(samples[i], i), quantize_bytes(scaled));
    }
}

} // namespace xcnn
