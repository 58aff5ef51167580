// xcnn: split, train, evaluate, predict, gradcheck, report, synth.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
// numeric failure.

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <xcnn/checkpoint.hpp>
#include <xcnn/dataset.hpp>
#include <xcnn/gradcheck.hpp>
#include <xcnn/image_io.hpp>
#include <xcnn/image_ops.hpp>
#include <xcnn/parallel.hpp>
#include <xcnn/report.hpp>
#include <xcnn/synthetic.hpp>
#include <xcnn/training.hpp>

namespace fs = std::filesystem;
using namespace xcnn;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SplitArgs {
    std::string data;
    std::string manifest;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string arch = "cnn3";
    std::string manifest;
    std::string augment = "on";
    std::string out;
    TrainingSchedule schedule;
};

struct EvaluateArgs {
    std::string model;
    std::string arch;
    std::string manifest;
    std::string split = "test";
    std::string out = ".";
};

struct PredictArgs {
    std::string model;
    std::string arch;
    std::uint64_t seed = 0;
    std::string image;
};

struct GradcheckArgs {
    std::string arch = "cnn3";
    std::uint64_t seed = 0;
    std::size_t probes = 16;
    double tolerance = 1e-4;
    double perturbation = 1e-5;
};

struct ReportArgs {
    std::string history;
    std::string out;
};

struct SynthArgs {
    std::string out;
    std::string task = "squares";
    std::size_t count = 40;
    double minority_fraction = 0.25;
    std::uint64_t seed = 0;
};

void print_counts(const DatasetManifest& m) {
    std::printf("%-6s %7s %7s %7s\n", "split", "COVID", "Normal", "total");
    for (Split s : kSplits) {
        std::size_t c = 0, n = 0;
        for (const auto& r : m.records)
            if (r.split == s && !r.augmented) (r.label == Label::COVID ? c : n)++;
        std::printf("%-6s %7zu %7zu %7zu\n", std::string(split_name(s)).c_str(), c, n, c + n);
    }
    std::size_t augmented = 0;
    for (const auto& r : m.records) augmented += r.augmented;
    std::printf("augmented train slots: %zu\n", augmented);
}

int cmd_split(const SplitArgs& a) {
    std::vector<LabeledPath> items;
    try {
        items = scan_dataset_dir(a.data);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    const auto manifest = balance_by_augmentation(split_dataset(std::move(items), a.seed), a.seed);
    write_manifest(a.manifest, manifest);
    print_counts(manifest);
    return kOk;
}

std::string echo_config(const TrainArgs& a) {
    const auto& s = a.schedule;
    std::string out = "threads = " + std::to_string(num_threads()) + "\n[train]\n";
    auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    auto quoted = [](const std::string& v) { return "\"" + v + "\""; };
    auto num = [](double v) {
        char buf[32];
        return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
    };
    line("arch", quoted(a.arch));
    line("manifest", quoted(a.manifest));
    line("augment", quoted(a.augment));
    line("seed", std::to_string(s.seed));
    line("out", quoted(a.out));
    line("epochs1", std::to_string(s.phase1_epochs));
    line("epochs2", std::to_string(s.phase2_epochs));
    line("batch-size", std::to_string(s.batch_size));
    line("lr", num(s.adam.lr));
    line("beta1", num(s.adam.beta1));
    line("beta2", num(s.adam.beta2));
    line("adam-epsilon", num(s.adam.epsilon));
    line("keep-epoch-checkpoints", s.keep_epoch_checkpoints ? "true" : "false");
    return out;
}

int cmd_train(const TrainArgs& a) {
    try {
        build_architecture(a.arch);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    a.schedule.validate();
    const fs::path out = a.out;
    fs::create_directories(out);
    detail::write_text(out / "config.txt", echo_config(a));

    DatasetManifest manifest;
    try {
        manifest = read_manifest(a.manifest);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    auto data = load_dataset(std::move(manifest));
    std::printf("training %s on %zu train / %zu val images, augmentation %s\n", a.arch.c_str(),
                data.manifest.count(Split::Train), data.manifest.count(Split::Val), a.augment.c_str());
    const auto result = train(a.arch, std::move(data), a.schedule, a.augment == "on", out, [](const EpochRecord& r, Network&) {
        std::printf("epoch %3zu phase %d  train_loss %.4f train_acc %.4f  val_loss %.4f val_acc %.4f\n", r.epoch,
                    r.phase, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        std::fflush(stdout);
        return true;
    });
    export_history_csv(result.history, out / "history.csv");
    write_curves_svg(result.history, out / "curves.svg");
    std::printf("wrote %s\n", out.string().c_str());
    return kOk;
}

Network open_model(const std::string& path, const std::string& arch) {
    if (!fs::exists(path)) throw UsageError("model file not found: " + path);
    if (arch.empty()) return load_checkpoint(path);
    return load_checkpoint(path, arch);
}

int cmd_evaluate(const EvaluateArgs& a) {
    Network net = open_model(a.model, a.arch);
    const Split split = parse_split(a.split);
    DatasetManifest manifest;
    try {
        manifest = read_manifest(a.manifest);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    const auto records = manifest.select(split, false);
    if (records.empty()) throw UsageError("split '" + a.split + "' is empty");
    DatasetManifest subset = manifest;
    subset.records = records;
    const auto data = load_dataset(std::move(subset));
    const Evaluation ev = evaluate(net, data, split);
    std::printf("model %s (%s, epoch %llu) on %s split\n", a.model.c_str(), net.spec().id.c_str(),
                static_cast<unsigned long long>(net.epoch()), a.split.c_str());
    std::fputs(format_metrics(ev.metrics).c_str(), stdout);
    std::printf("macro precision %.4f recall %.4f f1 %.4f\n", ev.macro.precision, ev.macro.recall, ev.macro.f1);
    fs::create_directories(a.out);
    const fs::path listing = fs::path(a.out) / ("predictions_" + a.split + ".csv");
    detail::write_text(listing, predictions_csv(ev));
    std::printf("wrote %s\n", listing.string().c_str());
    return kOk;
}

int cmd_predict(const PredictArgs& a) {
    std::optional<Network> net;
    if (!a.model.empty()) {
        net = open_model(a.model, a.arch);
    } else if (!a.arch.empty()) {
        try {
            net = make_network(a.arch, a.seed);
        } catch (const ParameterError& e) {
            throw UsageError(e.what());
        }
    } else {
        throw UsageError("predict needs --model or --arch");
    }
    if (!fs::exists(a.image)) throw UsageError("image not found: " + a.image);
    const Tensor img = preprocess(load_grayscale(a.image));
    const Tensor probs = predict_proba(*net, img.reshaped({1, kImageSize, kImageSize, 1}));
    const int cls = predicted_class(probs[0], probs[1]);
    std::printf("%s p_covid=%.6f p_normal=%.6f\n", std::string(label_name(Label(cls))).c_str(), probs[0], probs[1]);
    return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    Network net;
    try {
        net = make_network(a.arch, a.seed);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    // Dense batch norm needs two samples for batch statistics.
    const std::size_t batch = net.has_batchnorm() ? 2 : 1;
    Rng rng = Rng::derive(a.seed, {Rng::tag("gradcheck-input")});
    Tensor x({batch, kImageSize, kImageSize, 1});
    for (auto& v : x.data()) v = rng.uniform();
    std::vector<int> classes;
    for (std::size_t i = 0; i < batch; ++i) classes.push_back(int(i % 2));
    GradCheckOptions opts;
    opts.max_probes_per_tensor = a.probes;
    opts.tolerance = a.tolerance;
    opts.perturbation = a.perturbation;
    opts.seed = a.seed;
    const auto report = gradient_check(net, x, one_hot(classes), opts);
    std::fputs(report.format().c_str(), stdout);
    std::printf("%s: max relative error %.3e over %zu tensors\n", report.passed() ? "PASS" : "FAIL",
                report.max_rel_err(), report.entries.size());
    return report.passed() ? kOk : kRuntime;
}

int cmd_report(const ReportArgs& a) {
    if (!fs::exists(a.history)) throw UsageError("history file not found: " + a.history);
    TrainingHistory h;
    try {
        h = read_history_csv(a.history);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    fs::create_directories(a.out);
    const fs::path svg = fs::path(a.out) / "curves.svg";
    write_curves_svg(h, svg);
    std::printf("wrote %s\n", svg.string().c_str());
    return kOk;
}

int cmd_synth(const SynthArgs& a) {
    std::vector<SyntheticSample> samples;
    if (a.task == "squares") {
        samples = square_task(a.count / 2, a.seed);
    } else {
        const auto covid = static_cast<std::size_t>(a.minority_fraction * double(a.count));
        samples = blob_task(covid, a.count - covid, a.seed);
    }
    write_synthetic_dataset(a.out, samples);
    std::printf("wrote %zu images under %s\n", samples.size(), a.out.c_str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small CNNs for COVID / Normal chest X-ray classification"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML/INI file ([train], [split], ... sections)");
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads; 0 = all cores")->envname("XCNN_THREADS");

    SplitArgs sa;
    auto* split = app.add_subcommand("split", "Stratified 70/20/10 split of DATA/COVID and DATA/Normal");
    split->add_option("--data", sa.data, "Dataset root with COVID/ and Normal/")->required();
    split->add_option("--manifest", sa.manifest, "Manifest CSV to write")->required();
    split->add_option("--seed", sa.seed, "Split and balancing seed");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Two-phase training run");
    tr->add_option("--arch", ta.arch, "Architecture")->check(CLI::IsMember({"cnn1", "cnn3", "cnn4"}));
    tr->add_option("--manifest", ta.manifest, "Manifest CSV")->required();
    tr->add_option("--augment", ta.augment, "Augment phase 2")->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--seed", ta.schedule.seed, "Run seed");
    tr->add_option("--out", ta.out, "Output directory")->required();
    tr->add_option("--epochs1", ta.schedule.phase1_epochs, "Phase 1 epochs (no augmentation)");
    tr->add_option("--epochs2", ta.schedule.phase2_epochs, "Phase 2 epochs");
    tr->add_option("--batch-size", ta.schedule.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    tr->add_option("--lr", ta.schedule.adam.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    tr->add_option("--beta1", ta.schedule.adam.beta1, "Adam beta1")->check(CLI::Range(0.0, 1.0));
    tr->add_option("--beta2", ta.schedule.adam.beta2, "Adam beta2")->check(CLI::Range(0.0, 1.0));
    tr->add_option("--adam-epsilon", ta.schedule.adam.epsilon, "Adam epsilon")->check(CLI::PositiveNumber);
    tr->add_flag("--keep-epoch-checkpoints", ta.schedule.keep_epoch_checkpoints,
                 "Also write epoch_NNN.xcnn every epoch");

    EvaluateArgs ea;
    auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on one split");
    ev->add_option("--model", ea.model, "Checkpoint file")->required();
    ev->add_option("--arch", ea.arch, "Fail unless the checkpoint holds this architecture");
    ev->add_option("--manifest", ea.manifest, "Manifest CSV")->required();
    ev->add_option("--split", ea.split, "Split to score")->check(CLI::IsMember({"train", "test", "val"}));
    ev->add_option("--out", ea.out, "Directory for the prediction listing");

    PredictArgs pa;
    auto* pr = app.add_subcommand("predict", "Classify one PNG");
    pr->add_option("--model", pa.model, "Checkpoint file");
    pr->add_option("--arch", pa.arch, "Without --model: freshly initialized architecture; with it: required match");
    pr->add_option("--seed", pa.seed, "Init seed with --arch");
    pr->add_option("--image", pa.image, "PNG image")->required();

    GradcheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter tensor");
    gc->add_option("--arch", ga.arch, "Architecture");
    gc->add_option("--seed", ga.seed, "Init and input seed");
    gc->add_option("--probes", ga.probes, "Elements probed per tensor; 0 = all");
    gc->add_option("--tolerance", ga.tolerance, "Maximum relative error");
    gc->add_option("--perturbation", ga.perturbation, "Central-difference step")->check(CLI::PositiveNumber);

    ReportArgs ra;
    auto* rp = app.add_subcommand("report", "Render accuracy and loss curves from a history CSV");
    rp->add_option("--history", ra.history, "History CSV")->required();
    rp->add_option("--out", ra.out, "Output directory")->required();

    SynthArgs ya;
    auto* sy = app.add_subcommand("synth", "Write a small synthetic COVID/ Normal/ PNG tree");
    sy->add_option("--out", ya.out, "Dataset root to create")->required();
    sy->add_option("--task", ya.task, "squares or blobs")->check(CLI::IsMember({"squares", "blobs"}));
    sy->add_option("--count", ya.count, "Number of images")->check(CLI::PositiveNumber);
    sy->add_option("--minority-fraction", ya.minority_fraction, "COVID share for blobs")->check(CLI::Range(0.0, 1.0));
    sy->add_option("--seed", ya.seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        set_num_threads(threads);
        if (*split) return cmd_split(sa);
        if (*tr) return cmd_train(ta);
        if (*ev) return cmd_evaluate(ea);
        if (*pr) return cmd_predict(pa);
        if (*gc) return cmd_gradcheck(ga);
        if (*rp) return cmd_report(ra);
        if (*sy) return cmd_synth(ya);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const CompatibilityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kUsage;
}
