#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include <xcnn/checkpoint.hpp>
#include <xcnn/image_io.hpp>
#include <xcnn/synthetic.hpp>
#include <xcnn/training.hpp>

#include "cli_runner.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {
CliRun xcnn_cli(const fs::path& cwd, const std::string& args, const std::string& env = "") {
    return run_program(XCNN_CLI_PATH, cwd, args, env);
}

/// Scratch dir holding data/ (20 squares) and m.csv.
struct Workspace {
    TempDir dir;
    Workspace() {
        xcnn::write_synthetic_dataset(dir / "data", xcnn::square_task(10, 1));
        const CliRun r = xcnn_cli(dir.path(), "split --data data --seed 5 --manifest m.csv");
        EXPECT_EQ(r.code, 0) << r.out;
    }
    const fs::path& path() const { return dir.path(); }
};

std::string short_train(const std::string& arch) {
    return "train --arch " + arch + " --manifest m.csv --epochs1 2 --epochs2 3 --batch-size 8 ";
}
const std::string kShortTrain = short_train("cnn1");
} // namespace

TEST(CliHelp, ListsFlagsWithDefaults) {
    TempDir dir;
    const CliRun r = xcnn_cli(dir.path(), "train --help");
    EXPECT_EQ(r.code, 0);
    for (const char* s : {"--epochs1 UINT [10]", "--epochs2 UINT [50]", "[256]", "--lr", "[0.001]", "[0.9]",
                          "[0.999]", "[1e-08]", "--augment", "[on]", "--seed", "--arch", "--out"})
        EXPECT_NE(r.out.find(s), std::string::npos) << s;
    const CliRun top = xcnn_cli(dir.path(), "--help");
    EXPECT_NE(top.out.find("XCNN_THREADS"), std::string::npos);
}

TEST(CliUsage, MissingSubcommandOrFlagIsExitTwo) {
    TempDir dir;
    EXPECT_EQ(xcnn_cli(dir.path(), "").code, 2);
    EXPECT_EQ(xcnn_cli(dir.path(), "train --out x").code, 2);
    EXPECT_EQ(xcnn_cli(dir.path(), "bogus").code, 2);
}

TEST(CliSplit, PrintsCountsAndIsReproducible) {
    Workspace ws;
    const CliRun r = xcnn_cli(ws.path(), "split --data data --seed 5 --manifest again.csv");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("train        7       7      14"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("test         2       2       4"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("val          1       1       2"), std::string::npos) << r.out;
    EXPECT_EQ(slurp(ws.path() / "m.csv"), slurp(ws.path() / "again.csv"));
}

TEST(CliSplit, EmptyClassDirIsExitTwoNamingIt) {
    TempDir dir;
    fs::create_directories(dir / "d" / "COVID");
    fs::create_directories(dir / "d" / "Normal");
    xcnn::save_png(dir / "d" / "Normal" / "a.png", xcnn::ByteImage({4, 4, 1}));
    const CliRun r = xcnn_cli(dir.path(), "split --data d --manifest m.csv");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("COVID"), std::string::npos);
    xcnn::save_png(dir / "d" / "COVID" / "b.png", xcnn::ByteImage({4, 4, 1}));
    fs::remove_all(dir / "d" / "Normal");
    const CliRun missing = xcnn_cli(dir.path(), "split --data d --manifest m.csv");
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.out.find("Normal"), std::string::npos);
}

TEST(CliTrain, OverridesGiveFiveEpochRunWithArtifacts) {
    Workspace ws;
    const CliRun r = xcnn_cli(ws.path(), kShortTrain + "--out run");
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string history = slurp(ws.path() / "run" / "history.csv");
    EXPECT_EQ(count_lines(history), 6u);
    for (const char* f : {"config.txt", "curves.svg", "last.xcnn", "best_val_acc.xcnn"})
        EXPECT_TRUE(fs::exists(ws.path() / "run" / f)) << f;
    const std::string config = slurp(ws.path() / "run" / "config.txt");
    EXPECT_NE(config.find("epochs1 = 2"), std::string::npos);
    EXPECT_NE(config.find("batch-size = 8"), std::string::npos);
    EXPECT_NE(config.find("lr = 0.001"), std::string::npos);
    EXPECT_EQ(xcnn::load_checkpoint(ws.path() / "run" / "last.xcnn").epoch(), 5u);
}

TEST(CliTrain, WritesNothingOutsideOut) {
    Workspace ws;
    std::set<std::string> before;
    for (const auto& e : fs::recursive_directory_iterator(ws.path())) before.insert(e.path().string());
    ASSERT_EQ(xcnn_cli(ws.path(), kShortTrain + "--out run").code, 0);
    for (const auto& e : fs::recursive_directory_iterator(ws.path())) {
        const std::string p = e.path().string();
        if (!before.count(p)) {
            EXPECT_EQ(p.rfind((ws.path() / "run").string(), 0), 0u) << p;
        }
    }
}

TEST(CliTrain, ConfigFileAndFlagPrecedence) {
    Workspace ws;
    std::ofstream(ws.path() / "cfg.toml") << "[train]\narch = \"cnn1\"\nmanifest = \"m.csv\"\nepochs1 = 1\nepochs2 = 1\n"
                                             "batch-size = 8\nout = \"from_file\"\n";
    const CliRun r = xcnn_cli(ws.path(), "--config cfg.toml train --epochs2 2");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(count_lines(slurp(ws.path() / "from_file" / "history.csv")), 4u);
    // The echoed config is itself a valid config file.
    const CliRun again = xcnn_cli(ws.path(), "--config from_file/config.txt train --out echo");
    ASSERT_EQ(again.code, 0) << again.out;
    EXPECT_EQ(slurp(ws.path() / "from_file" / "history.csv"), slurp(ws.path() / "echo" / "history.csv"));
}

TEST(CliTrain, UnknownArchIsExitTwoListingIds) {
    Workspace ws;
    const CliRun r = xcnn_cli(ws.path(), "train --arch cnn2 --manifest m.csv --out x");
    EXPECT_EQ(r.code, 2);
    for (const char* id : {"cnn1", "cnn3", "cnn4"}) EXPECT_NE(r.out.find(id), std::string::npos);
}

TEST(CliTrain, DivergenceIsExitThree) {
    Workspace ws;
    const CliRun r = xcnn_cli(ws.path(), kShortTrain + "--lr 1e300 --out run");
    EXPECT_EQ(r.code, 3) << r.out;
    EXPECT_NE(r.out.find("epoch"), std::string::npos);
}

TEST(CliTrain, ThreadCountDoesNotChangeOutputs) {
    Workspace ws;
    ASSERT_EQ(xcnn_cli(ws.path(), "--threads 1 " + short_train("cnn4") + "--out one").code, 0);
    ASSERT_EQ(xcnn_cli(ws.path(), short_train("cnn4") + "--out three", "XCNN_THREADS=3").code, 0);
    EXPECT_EQ(slurp(ws.path() / "one" / "history.csv"), slurp(ws.path() / "three" / "history.csv"));
    EXPECT_EQ(slurp(ws.path() / "one" / "last.xcnn"), slurp(ws.path() / "three" / "last.xcnn"));
    EXPECT_NE(slurp(ws.path() / "three" / "config.txt").find("threads = 3"), std::string::npos);
}

TEST(CliEvaluate, PrintsMetricsAndWritesListing) {
    Workspace ws;
    ASSERT_EQ(xcnn_cli(ws.path(), kShortTrain + "--out run").code, 0);
    const CliRun r = xcnn_cli(ws.path(), "evaluate --model run/last.xcnn --manifest m.csv --split test --out run");
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* s : {"accuracy", "precision", "recall", "f1", "tp "}) EXPECT_NE(r.out.find(s), std::string::npos);
    const std::string listing = slurp(ws.path() / "run" / "predictions_test.csv");
    EXPECT_EQ(listing.rfind("path,true,predicted,p_covid\n", 0), 0u);
    EXPECT_EQ(count_lines(listing), 1u + 4u + 3u);
}

TEST(CliEvaluate, ArchMismatchIsTwoAndCorruptionIsThree) {
    Workspace ws;
    ASSERT_EQ(xcnn_cli(ws.path(), kShortTrain + "--out run").code, 0);
    EXPECT_EQ(xcnn_cli(ws.path(), "evaluate --model run/last.xcnn --arch cnn3 --manifest m.csv").code, 2);
    const std::string bytes = slurp(ws.path() / "run" / "last.xcnn");
    std::ofstream(ws.path() / "cut.xcnn", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_EQ(xcnn_cli(ws.path(), "evaluate --model cut.xcnn --manifest m.csv").code, 3);
    EXPECT_EQ(xcnn_cli(ws.path(), "evaluate --model none.xcnn --manifest m.csv").code, 2);
}

TEST(CliPredict, ZeroProbeOnFreshModelGivesProbabilityPair) {
    TempDir dir;
    xcnn::save_png(dir / "zero.png", xcnn::ByteImage({30, 30, 1}));
    const CliRun r = xcnn_cli(dir.path(), "predict --arch cnn1 --seed 3 --image zero.png");
    ASSERT_EQ(r.code, 0) << r.out;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(r.out, m, std::regex("^(COVID|Normal) p_covid=([0-9.]+) p_normal=([0-9.]+)")))
        << r.out;
    EXPECT_NEAR(std::stod(m[2]) + std::stod(m[3]), 1.0, 2e-6);
    EXPECT_EQ(m[1], std::stod(m[2]) >= std::stod(m[3]) ? "COVID" : "Normal");
}

TEST(CliPredict, NeedsModelOrArch) {
    TempDir dir;
    xcnn::save_png(dir / "zero.png", xcnn::ByteImage({30, 30, 1}));
    EXPECT_EQ(xcnn_cli(dir.path(), "predict --image zero.png").code, 2);
    EXPECT_EQ(xcnn_cli(dir.path(), "predict --arch cnn1 --image missing.png").code, 2);
}

TEST(CliGradcheck, Cnn3PassesAndReportsEveryTensor) {
    TempDir dir;
    const CliRun r = xcnn_cli(dir.path(), "gradcheck --arch cnn3 --seed 1");
    EXPECT_EQ(r.code, 0) << r.out;
    for (const char* t : {"conv2d_1.kernels", "conv2d_3.bias", "dense_1.weights", "dense_2.bias"})
        EXPECT_NE(r.out.find(t), std::string::npos) << t;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(CliReport, RendersSvgFromHistory) {
    Workspace ws;
    ASSERT_EQ(xcnn_cli(ws.path(), kShortTrain + "--out run").code, 0);
    EXPECT_EQ(xcnn_cli(ws.path(), "report --history run/history.csv --out rep").code, 0);
    const std::string svg = slurp(ws.path() / "rep" / "curves.svg");
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
    EXPECT_EQ(xcnn_cli(ws.path(), "report --history none.csv --out rep").code, 2);
}
