#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "dataset.hpp"
#include "image_io.hpp"
#include "image_ops.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace xcnn {

struct TrainingSchedule {
    std::size_t phase1_epochs = 10;
    std::size_t phase2_epochs = 50;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    AdamConfig adam;
    AugmentRanges ranges;
    // Also keep epoch_NNN.xcnn for every epoch, not just last and best.
    bool keep_epoch_checkpoints = false;

    std::size_t total_epochs() const { return phase1_epochs + phase2_epochs; }

    void validate() const {
        if (batch_size < 1) throw ParameterError("batch size must be at least 1");
        if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ParameterError("learning rate must be finite and >= 0");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    int phase = 1;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    std::size_t train_samples = 0; // not exported
    std::size_t steps = 0;         // not exported

    friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
        return a.epoch == b.epoch && a.phase == b.phase && a.train_loss == b.train_loss &&
               a.train_acc == b.train_acc && a.val_loss == b.val_loss && a.val_acc == b.val_acc;
    }
};

struct TrainingHistory {
    std::vector<EpochRecord> rows;
};

/// Manifest plus the preprocessed 30x30 [0, 1] image of every distinct path.
struct LoadedDataset {
    DatasetManifest manifest;
    std::map<std::string, Tensor> images;

    const Tensor& image(const std::string& path) const {
        const auto it = images.find(path);
        if (it == images.end()) throw DataError("no image loaded for " + path);
        return it->second;
    }
};

/// Decodes and preprocesses every image referenced by the manifest.
inline LoadedDataset load_dataset(DatasetManifest manifest, std::size_t size = kImageSize) {
    std::vector<std::string> paths;
    for (const auto& r : manifest.records) paths.push_back(r.path);
    std::sort(paths.begin(), paths.end());
    paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
    std::vector<Tensor> decoded(paths.size());
    parallel_for(paths.size(), [&](std::size_t i) { decoded[i] = preprocess(load_grayscale(paths[i]), size); });
    LoadedDataset data{std::move(manifest), {}};
    for (std::size_t i = 0; i < paths.size(); ++i) data.images.emplace(paths[i], std::move(decoded[i]));
    return data;
}

// ---------------------------------------------------------------- evaluation

struct Prediction {
    std::string path;
    int truth = 0;
    int predicted = 0;
    double p_covid = 0.0;
};

struct Evaluation {
    Metrics metrics;
    MacroScores macro;
    double loss = 0.0;
    std::vector<Prediction> predictions;
};

/// Argmax of a probability pair; ties go to class 0.
inline int predicted_class(double p0, double p1) { return p1 > p0 ? 1 : 0; }

namespace detail {
inline Tensor stack_images(const std::vector<const Tensor*>& images) {
    const Shape& s = images.front()->shape();
    Tensor x({images.size(), s[0], s[1], s[2]});
    const std::size_t n = images.front()->size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_shape(*images[i], s, "stacked image");
        std::copy(images[i]->raw(), images[i]->raw() + n, x.raw() + i * n);
    }
    return x;
}
} // namespace detail

/// Infer-mode pass over the original records of one split. Parameters and
/// running statistics are left untouched.
inline Evaluation evaluate(Network& net, const LoadedDataset& data, Split split, std::size_t batch_size = 256) {
    const auto records = data.manifest.select(split, false);
    if (records.empty()) throw DataError("split '" + std::string(split_name(split)) + "' is empty");
    Evaluation ev;
    std::vector<int> truths, preds;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
        const std::size_t end = std::min(records.size(), begin + batch_size);
        std::vector<const Tensor*> imgs;
        std::vector<int> labels;
        for (std::size_t i = begin; i < end; ++i) {
            imgs.push_back(&data.image(records[i].path));
            labels.push_back(class_index(records[i].label));
        }
        const Tensor probs = predict_proba(net, detail::stack_images(imgs));
        const auto loss = cross_entropy(probs, one_hot(labels));
        for (std::size_t k = 0; k < labels.size(); ++k) {
            loss_sum += loss.per_sample[k];
            const int p = predicted_class(probs[2 * k], probs[2 * k + 1]);
            ev.predictions.push_back({records[begin + k].path, labels[k], p, probs[2 * k]});
            truths.push_back(labels[k]);
            preds.push_back(p);
        }
    }
    ev.loss = loss_sum / static_cast<double>(records.size());
    ev.metrics = confusion_and_scores(preds, truths);
    ev.macro = macro_scores(preds, truths);
    return ev;
}

namespace detail {
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw DataError("bad number '" + s + "'");
    return v;
}
} // namespace detail

/// `path,true,predicted,p_covid` rows followed by '#' footer lines with the
/// macro-averaged scores.
inline std::string predictions_csv(const Evaluation& ev) {
    std::string out = "path,true,predicted,p_covid\n";
    for (const auto& p : ev.predictions)
        out += detail::csv_field(p.path) + ',' + std::string(label_name(Label(p.truth))) + ',' +
               std::string(label_name(Label(p.predicted))) + ',' + detail::fmt17(p.p_covid) + '\n';
    out += "# macro_precision=" + detail::fmt17(ev.macro.precision) + '\n';
    out += "# macro_recall=" + detail::fmt17(ev.macro.recall) + '\n';
    out += "# macro_f1=" + detail::fmt17(ev.macro.f1) + '\n';
    return out;
}

// ---------------------------------------------------------------- history CSV

inline constexpr std::string_view kHistoryHeader = "epoch,phase,train_loss,train_acc,val_loss,val_acc";

inline std::string history_csv(const TrainingHistory& h) {
    std::string out(kHistoryHeader);
    out += '\n';
    for (const auto& r : h.rows)
        out += std::to_string(r.epoch) + ',' + std::to_string(r.phase) + ',' + detail::fmt17(r.train_loss) + ',' +
               detail::fmt17(r.train_acc) + ',' + detail::fmt17(r.val_loss) + ',' + detail::fmt17(r.val_acc) + '\n';
    return out;
}

inline TrainingHistory parse_history_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHistoryHeader)
        throw DataError("history header must be '" + std::string(kHistoryHeader) + "'");
    TrainingHistory h;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::csv_split(line);
        if (f.size() != 6) throw DataError("history row needs 6 fields: " + line);
        EpochRecord r;
        r.epoch = detail::parse_u64(f[0], "epoch");
        r.phase = static_cast<int>(detail::parse_u64(f[1], "phase"));
        r.train_loss = detail::parse_double(f[2]);
        r.train_acc = detail::parse_double(f[3]);
        r.val_loss = detail::parse_double(f[4]);
        r.val_acc = detail::parse_double(f[5]);
        h.rows.push_back(r);
    }
    return h;
}

inline void export_history_csv(const TrainingHistory& h, const std::filesystem::path& path) {
    if (h.rows.empty()) throw DataError("history is empty");
    detail::write_text(path, history_csv(h));
}

inline TrainingHistory read_history_csv(const std::filesystem::path& path) {
    return parse_history_csv(detail::read_text(path));
}

// ---------------------------------------------------------------- training

struct TrainResult {
    Network model;
    TrainingHistory history;
};

/// Called after every epoch with the current model; returning false stops
/// training early.
using EpochCallback = std::function<bool(const EpochRecord&, Network&)>;

/// Two-phase training. Phase 1 runs plain epochs over the original Train
/// records. Phase 2 adds the augmented records of a class-balanced manifest,
/// each warped afresh every epoch; with augment off it runs plain epochs
/// instead. After every epoch the Val split is scored in Infer mode and, if
/// out_dir is given, last.xcnn and best_val_acc.xcnn are written there.
inline TrainResult train(std::string_view arch_id, LoadedDataset data, const TrainingSchedule& schedule, bool augment,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const EpochCallback& on_epoch = {}) {
    schedule.validate();
    if (data.manifest.count(Split::Train) == 0) throw DataError("the train split is empty");
    if (data.manifest.count(Split::Val) == 0) throw DataError("the val split is empty");
    if (augment && !data.manifest.has_augmented())
        data.manifest = balance_by_augmentation(std::move(data.manifest), schedule.seed);

    TrainResult result{make_network(arch_id, schedule.seed), {}};
    Network& net = result.model;
    AdamState adam;
    adam.config = schedule.adam;
    double best_val = -1.0;

    // Record indices into the manifest; the index doubles as the dropout sample id.
    std::vector<std::size_t> plain, balanced;
    for (std::size_t i = 0; i < data.manifest.records.size(); ++i) {
        const auto& r = data.manifest.records[i];
        if (r.split != Split::Train) continue;
        if (!r.augmented) plain.push_back(i);
        balanced.push_back(i);
    }

    for (std::size_t epoch = 1; epoch <= schedule.total_epochs(); ++epoch) {
        const int phase = epoch <= schedule.phase1_epochs ? 1 : 2;
        const bool warp = phase == 2 && augment;
        std::vector<std::size_t> order = warp ? balanced : plain;
        Rng shuffler = Rng::derive(schedule.seed, {Rng::tag("shuffle"), epoch});
        shuffle(order, shuffler);

        // A one-sample tail batch would leave dense batch norm without statistics.
        std::vector<std::size_t> bounds;
        for (std::size_t b = 0; b < order.size(); b += schedule.batch_size) bounds.push_back(b);
        if (net.has_batchnorm() && bounds.size() > 1 && order.size() - bounds.back() == 1) bounds.pop_back();
        bounds.push_back(order.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = phase;
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
            const std::size_t n = bounds[b + 1] - bounds[b];
            std::vector<Tensor> warped(n);
            std::vector<const Tensor*> imgs(n);
            std::vector<int> labels(n);
            std::vector<std::uint64_t> ids(n);
            parallel_for(n, [&](std::size_t k) {
                const auto& r = data.manifest.records[order[bounds[b] + k]];
                const Tensor& base = data.image(r.path);
                if (warp && r.augmented) {
                    Rng rng = Rng::derive(schedule.seed, {Rng::tag("augment"), epoch, r.seed});
                    warped[k] = augment_sample(base, schedule.ranges.sample(rng));
                    imgs[k] = &warped[k];
                } else {
                    imgs[k] = &base;
                }
            });
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t idx = order[bounds[b] + k];
                labels[k] = class_index(data.manifest.records[idx].label);
                ids[k] = idx;
            }

            ForwardContext ctx;
            ctx.mode = Mode::Train;
            ctx.seed = schedule.seed;
            ctx.epoch = epoch;
            ctx.sample_ids = ids;
            const Tensor y = one_hot(labels);
            const Tensor probs = net.forward(detail::stack_images(imgs), ctx);
            const auto loss = cross_entropy(probs, y);
            if (!std::isfinite(loss.mean))
                throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
            net.backward_from_logits(softmax_xent_grad(probs, y));

            std::vector<Tensor*> params;
            std::vector<const Tensor*> grads;
            for (auto& p : net.parameters()) {
                params.push_back(p.value);
                grads.push_back(p.grad);
            }
            adam_step(params, grads, adam);
            for (Tensor* p : params)
                if (!all_finite(*p)) throw NumericError("non-finite parameter after an update in epoch " +
                                                        std::to_string(epoch));

            for (std::size_t k = 0; k < n; ++k) {
                loss_sum += loss.per_sample[k];
                correct += predicted_class(probs[2 * k], probs[2 * k + 1]) == labels[k];
            }
            ++rec.steps;
        }
        rec.train_samples = order.size();
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());

        const Evaluation val = evaluate(net, data, Split::Val, schedule.batch_size);
        if (!std::isfinite(val.loss)) throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch));
        rec.val_loss = val.loss;
        rec.val_acc = val.metrics.accuracy;
        result.history.rows.push_back(rec);

        net.set_epoch(epoch);
        if (out_dir) {
            save_checkpoint(net, *out_dir / "last.xcnn");
            if (rec.val_acc > best_val) {
                best_val = rec.val_acc;
                save_checkpoint(net, *out_dir / "best_val_acc.xcnn");
            }
            if (schedule.keep_epoch_checkpoints) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%03zu.xcnn", epoch);
                save_checkpoint(net, *out_dir / name);
            }
        }
        if (on_epoch && !on_epoch(rec, net)) break;
    }
    return result;
}

} // namespace xcnn
