#include <gtest/gtest.h>

#include <cmath>

#include <limits>

#include <xcnn/adam.hpp>
#include <xcnn/checkpoint.hpp>
#include <xcnn/gradcheck.hpp>
#include <xcnn/loss.hpp>
#include <xcnn/model.hpp>

#include "oracles.hpp"

using namespace xcnn;

namespace {
Tensor labels(std::initializer_list<int> cls) {
    std::vector<int> v(cls);
    return one_hot(v);
}
} // namespace

TEST(CrossEntropy, PerfectPrediction) {
    const auto l = cross_entropy(Tensor({1, 2}, {1.0, 0.0}), labels({0}));
    EXPECT_LE(l.mean, 1e-11);
    EXPECT_GE(l.mean, 0.0);
}

TEST(CrossEntropy, CoinFlip) {
    EXPECT_NEAR(cross_entropy(Tensor({1, 2}, {0.5, 0.5}), labels({0})).mean, 0.693147, 1e-6);
    EXPECT_NEAR(cross_entropy(Tensor({1, 2}, {0.5, 0.5}), labels({1})).mean, std::log(2.0), 1e-15);
}

TEST(CrossEntropy, ClosedForm) {
    EXPECT_NEAR(cross_entropy(Tensor({1, 2}, {0.25, 0.75}), labels({1})).mean, 0.287682, 1e-6);
}

TEST(CrossEntropy, ClampPreventsInfinity) {
    const auto l = cross_entropy(Tensor({1, 2}, {1.0, 0.0}), labels({1}));
    EXPECT_NEAR(l.mean, -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, MeanOfPerSample) {
    const auto l = cross_entropy(Tensor({3, 2}, {0.5, 0.5, 0.9, 0.1, 0.2, 0.8}), labels({0, 0, 0}));
    ASSERT_EQ(l.per_sample.size(), 3u);
    EXPECT_NEAR(l.mean, (l.per_sample[0] + l.per_sample[1] + l.per_sample[2]) / 3.0, 1e-15);
}

TEST(CrossEntropy, NonNegativeAndZeroOnlyAtTarget) {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double p = rng.uniform();
        const auto l = cross_entropy(Tensor({1, 2}, {p, 1.0 - p}), labels({int(i % 2)}));
        EXPECT_GE(l.mean, 0.0);
        EXPECT_GT(l.mean, 0.0);
    }
}

TEST(CrossEntropy, RejectsNonOneHotLabels) {
    EXPECT_THROW(cross_entropy(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.5, 0.5})), DataError);
    EXPECT_THROW(cross_entropy(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {1.0, 1.0})), DataError);
    EXPECT_THROW(cross_entropy(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.0, 0.0})), DataError);
}

TEST(SoftmaxXentGrad, ZeroAtTarget) {
    const Tensor g = softmax_xent_grad(Tensor({2, 2}, {1, 0, 0, 1}), labels({0, 1}));
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(SoftmaxXentGrad, ProbsMinusLabels) {
    EXPECT_EQ(softmax_xent_grad(Tensor({1, 2}, {0.5, 0.5}), labels({0})), Tensor({1, 2}, {-0.5, 0.5}));
}

TEST(SoftmaxXentGrad, MatchesFiniteDifferencesOfComposite) {
    Tensor logits = oracle::random_tensor({4, 2}, 17, -3, 3);
    const Tensor y = labels({0, 1, 1, 0});
    auto loss = [&] { return cross_entropy(softmax(logits), y).mean; };
    const Tensor g = softmax_xent_grad(softmax(logits), y);
    EXPECT_LT(oracle::max_relative_error(g, oracle::numeric_gradient(logits, loss)), 1e-4);
}

// ---------------------------------------------------------------- adam

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Tensor p = oracle::random_tensor({3, 3}, 1);
    const Tensor before = p, g({3, 3});
    AdamState s;
    Tensor* ps[] = {&p};
    const Tensor* gs[] = {&g};
    adam_step(ps, gs, s);
    EXPECT_EQ(p, before);
    EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor p({4}, 2.0);
    const Tensor g({4}, 1.0);
    AdamState s;
    Tensor* ps[] = {&p};
    const Tensor* gs[] = {&g};
    adam_step(ps, gs, s);
    for (double v : p.data()) EXPECT_NEAR(v, 2.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticTrajectoryMatchesScriptedOracle) {
    Tensor theta({1}, 1.0);
    Tensor grad({1});
    AdamState s;
    oracle::ScriptedAdam ref;
    double want = 1.0, prev = 1.0;
    Tensor* ps[] = {&theta};
    const Tensor* gs[] = {&grad};
    for (int step = 0; step < 3; ++step) {
        grad[0] = 2.0 * theta[0];
        want = ref.step(want, 2.0 * want);
        adam_step(ps, gs, s);
        EXPECT_LT(theta[0], prev);
        EXPECT_NEAR(theta[0], want, 1e-12);
        prev = theta[0];
    }
}

TEST(Adam, ZeroLearningRateIsIdentity) {
    Tensor p = oracle::random_tensor({5}, 2);
    const Tensor before = p, g = oracle::random_tensor({5}, 3);
    AdamState s;
    s.config.lr = 0.0;
    Tensor* ps[] = {&p};
    const Tensor* gs[] = {&g};
    for (int i = 0; i < 3; ++i) adam_step(ps, gs, s);
    EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepBoundedByLearningRate) {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        const double gv = rng.uniform(-1e3, 1e3) * std::pow(10.0, -double(rng.below(8)));
        Tensor p({1}, 0.0);
        const Tensor g({1}, gv);
        AdamState s;
        Tensor* ps[] = {&p};
        const Tensor* gs[] = {&g};
        adam_step(ps, gs, s);
        EXPECT_LE(std::abs(p[0]), 1e-3 * std::abs(gv) / (std::abs(gv) + 1e-8) + 1e-18);
        EXPECT_LT(std::abs(p[0]), 1e-3);
    }
}

TEST(Adam, MomentsStayNonNegativeAndShaped) {
    Tensor p = oracle::random_tensor({2, 3}, 4);
    AdamState s;
    Tensor* ps[] = {&p};
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Tensor g = oracle::random_tensor({2, 3}, 10 + i);
        const Tensor* gs[] = {&g};
        adam_step(ps, gs, s);
    }
    EXPECT_EQ(s.m[0].shape(), p.shape());
    for (double v : s.v[0].data()) EXPECT_GE(v, 0.0);
}

TEST(Adam, ShapeMismatch) {
    Tensor p({3});
    const Tensor g({4});
    AdamState s;
    Tensor* ps[] = {&p};
    const Tensor* gs[] = {&g};
    EXPECT_THROW(adam_step(ps, gs, s), DimensionError);
}

// ---------------------------------------------------------------- gradient check

namespace {
Network linear_model() {
    using L = LayerDescriptor;
    return Network(ArchitectureSpec::resolve("linear", {1, 1, 1, 3}, {L::flatten(), L::dense(2), L::softmax()}), 5);
}
} // namespace

TEST(GradientCheck, LinearModelIsExactToRoundoff) {
    const Network net = linear_model();
    const Tensor x = oracle::random_tensor({2, 1, 1, 3}, 6);
    const auto report = gradient_check(net, x, labels({0, 1}));
    ASSERT_EQ(report.entries.size(), 2u);
    EXPECT_TRUE(report.passed());
    EXPECT_LT(report.max_rel_err(), 1e-8);
}

TEST(GradientCheck, CorruptedGradientFails) {
    const Network net = linear_model();
    const Tensor x = oracle::random_tensor({2, 1, 1, 3}, 6);
    GradCheckOptions opts;
    opts.corrupt = "dense_1.weights";
    const auto report = gradient_check(net, x, labels({0, 1}), opts);
    EXPECT_FALSE(report.passed());
    EXPECT_FALSE(report.entries[0].pass);
    EXPECT_TRUE(report.entries[1].pass);
}

TEST(GradientCheck, ReportFormat) {
    const auto report = gradient_check(linear_model(), oracle::random_tensor({1, 1, 1, 3}, 6), labels({1}));
    const std::string text = report.format();
    EXPECT_NE(text.find("dense_1.weights "), std::string::npos);
    EXPECT_NE(text.find(" PASS\n"), std::string::npos);
}

TEST(GradientCheck, DoesNotModifyNetwork) {
    Network net = make_network("cnn1", 2);
    const auto before = serialize_checkpoint(net);
    GradCheckOptions opts;
    opts.max_probes_per_tensor = 4;
    gradient_check(net, oracle::random_tensor({1, 30, 30, 1}, 3, 0, 1), labels({0}), opts);
    EXPECT_EQ(serialize_checkpoint(net), before);
}

TEST(GradientCheck, NonFiniteLossIsNumericError) {
    Network net = linear_model();
    net.state(1).param("weights").value[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(gradient_check(net, oracle::random_tensor({1, 1, 1, 3}, 6), labels({0})), NumericError);
}

// Shrinking the step from 1e-4 to 1e-5 must not blow the error up by more
// than 10x; cancellation would. Below 1e-7 both are at the roundoff floor.
TEST(GradientCheck, StableUnderPerturbationChange) {
    const Network net = make_network("cnn3", 12);
    const Tensor x = oracle::random_tensor({1, 30, 30, 1}, 13, 0, 1);
    GradCheckOptions coarse, fine;
    coarse.perturbation = 1e-4;
    coarse.max_probes_per_tensor = fine.max_probes_per_tensor = 8;
    const auto a = gradient_check(net, x, labels({1}), coarse);
    const auto b = gradient_check(net, x, labels({1}), fine);
    EXPECT_LE(b.max_rel_err(), 10.0 * std::max(a.max_rel_err(), 1e-7));
}

TEST(GradientCheck, ProbesAcrossReluSwitchAreSkipped) {
    using L = LayerDescriptor;
    Network net(ArchitectureSpec::resolve("kink", {1, 1, 1, 3}, {L::flatten(), L::dense(2), L::relu(), L::dense(2), L::softmax()}),
                5);
    net.state(1).param("weights").value.fill(0.0);
    net.state(1).param("bias").value[0] = 1e-6;
    net.state(1).param("bias").value[1] = 0.5;
    const auto report = gradient_check(net, oracle::random_tensor({1, 1, 1, 3}, 6), labels({0}));
    ASSERT_EQ(report.entries[1].name, "dense_1.bias");
    EXPECT_EQ(report.entries[1].skipped, 1u);
    EXPECT_EQ(report.entries[1].probes, 2u);
    EXPECT_TRUE(report.passed()) << report.format();
}

class GradientCheckArch : public ::testing::TestWithParam<const char*> {};

TEST_P(GradientCheckArch, AllParametersPass) {
    const std::string arch = GetParam();
    const Network net = make_network(arch, 21);
    // Dense batch norm needs two samples per batch in Train mode.
    const std::size_t batch = arch == "cnn4" ? 2 : 1;
    const Tensor x = oracle::random_tensor({batch, 30, 30, 1}, 22, 0, 1);
    const Tensor y = batch == 2 ? labels({0, 1}) : labels({0});
    GradCheckOptions opts;
    opts.max_probes_per_tensor = 16;
    opts.seed = 23;
    const auto report = gradient_check(net, x, y, opts);
    EXPECT_TRUE(report.passed()) << report.format();
    for (const auto& e : report.entries) EXPECT_LT(e.skipped, e.probes) << e.name;
    opts.corrupt = arch == "cnn4" ? "dense_4.weights" : "dense_2.weights";
    EXPECT_FALSE(gradient_check(net, x, y, opts).passed());
}

INSTANTIATE_TEST_SUITE_P(Architectures, GradientCheckArch, ::testing::Values("cnn1", "cnn3", "cnn4"));
