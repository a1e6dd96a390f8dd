#include <gtest/gtest.h>

#include <cmath>

#include "neurostage/cnn.hpp"

using namespace neurostage;

namespace {

Tensor<double> random_tensor(Shape s, Rng& r, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = r.uniform(lo, hi);
    return t;
}

template <class L>
void randomize(L& layer, Rng& r) {
    for (auto p : layer.params())
        for (auto& v : p.value->values()) v = r.uniform(-0.5, 0.5);
}

Objective random_projection(const Shape& s, Rng& r) { return projection_objective(random_tensor(s, r)); }

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

TEST(Conv2d, HandComputedValidWindow) {
    Conv2d<double> c(1, 1, 3, 1, 0);
    c.weight().fill(1.0);
    c.bias().fill(0.0);
    Tensor<double> x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
    const auto y = c.infer(x);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(y[0], 54.0);
    EXPECT_DOUBLE_EQ(y[1], 63.0);
    EXPECT_DOUBLE_EQ(y[2], 90.0);
    EXPECT_DOUBLE_EQ(y[3], 99.0);
}

TEST(Conv2d, ZeroPaddingAndBias) {
    Conv2d<double> c(1, 1, 3, 1, 1);
    c.weight().fill(0.0);
    c.weight()[4] = 1.0;  // centre tap
    c.bias()[0] = 0.5;
    Rng r(3);
    const auto x = random_tensor({2, 1, 5, 5}, r);
    const auto y = c.infer(x);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] + 0.5);
}

TEST(Conv2d, OneByOneMixesChannels) {
    Conv2d<double> c(2, 1, 1, 1, 0);
    c.weight()[0] = 2.0;
    c.weight()[1] = -1.0;
    c.bias()[0] = 0.0;
    Rng r(4);
    const auto x = random_tensor({1, 2, 3, 3}, r);
    const auto y = c.infer(x);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], 2.0 * x[i] - x[9 + i]);
}

TEST(Conv2d, StrideTwoSubsamples) {
    Conv2d<double> c(1, 1, 1, 2, 0);
    c.weight()[0] = 1.0;
    Tensor<double> x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
    const auto y = c.infer(x);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(y.values()[0], 0.0);
    EXPECT_EQ(y.values()[1], 2.0);
    EXPECT_EQ(y.values()[2], 8.0);
    EXPECT_EQ(y.values()[3], 10.0);
}

TEST(Conv2d, OutputDimensions) {
    Conv2d<float> c(1, 2, 5, 1, 1);
    EXPECT_EQ(c.out_dim(248), 246u);
    EXPECT_EQ(c.out_dim(246), 244u);
    EXPECT_THROW(c.out_dim(1), InvalidArgument);
}

TEST(Conv2d, RejectsWrongChannels) {
    Conv2d<float> c(2, 4, 5, 1, 1);
    EXPECT_THROW(c.infer(Tensor<float>({1, 1, 10, 10})), InvalidArgument);
    EXPECT_THROW(c.infer(Tensor<float>({2, 10, 10})), InvalidArgument);
    EXPECT_THROW(Conv2d<float>(1, 1, 0, 1, 0), InvalidArgument);
}

TEST(Conv2d, ForwardMatchesInfer) {
    Rng r(5);
    Conv2d<double> c(2, 3, 3, 1, 1);
    randomize(c, r);
    const auto x = random_tensor({2, 2, 6, 7}, r);
    EXPECT_EQ(c.forward(x, Mode::Train, r), c.infer(x));
}

// ---------------------------------------------------------------------------
// BatchNorm

TEST(BatchNorm, TrainOutputIsStandardized) {
    Rng r(6);
    BatchNorm<double> bn(3);
    const auto x = random_tensor({8, 3, 4, 4}, r, 5.0, 20.0);
    const auto y = bn.forward(x, Mode::Train, r);
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0, sq = 0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t i = 0; i < 16; ++i) sum += y[(b * 3 + c) * 16 + i];
        const double mean = sum / 128.0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t i = 0; i < 16; ++i) sq += std::pow(y[(b * 3 + c) * 16 + i] - mean, 2);
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(sq / 128.0, 1.0, 1e-3);
    }
}

TEST(BatchNorm, ZeroGammaEmitsBeta) {
    Rng r(7);
    BatchNorm<double> bn(2);
    bn.gamma().fill(0.0);
    bn.beta()[0] = 1.5;
    bn.beta()[1] = -2.0;
    const auto x = random_tensor({4, 2}, r);
    const auto y = bn.forward(x, Mode::Train, r);
    for (std::size_t b = 0; b < 4; ++b) {
        EXPECT_DOUBLE_EQ(y[b * 2], 1.5);
        EXPECT_DOUBLE_EQ(y[b * 2 + 1], -2.0);
    }
}

TEST(BatchNorm, RunningStatisticsAndEvalByHand) {
    Rng r(8);
    BatchNorm<double> bn(1, 1e-5, 0.1);
    const Tensor<double> x({3, 1}, std::vector<double>{1.0, 2.0, 6.0});
    bn.forward(x, Mode::Train, r);
    // mean 3, unbiased variance ((4 + 1 + 9) / 2) = 7
    EXPECT_NEAR(bn.running_mean()[0], 0.9 * 0.0 + 0.1 * 3.0, 1e-12);
    EXPECT_NEAR(bn.running_var()[0], 0.9 * 1.0 + 0.1 * 7.0, 1e-12);
    const auto y = bn.forward(x, Mode::Eval, r);
    const double inv = 1.0 / std::sqrt(1.6 + 1e-5);
    EXPECT_NEAR(y[0], (1.0 - 0.3) * inv, 1e-12);
    EXPECT_NEAR(y[1], (2.0 - 0.3) * inv, 1e-12);
    EXPECT_NEAR(y[2], (6.0 - 0.3) * inv, 1e-12);
}

TEST(BatchNorm, EvalLeavesStateAlone) {
    Rng r(9);
    BatchNorm<double> bn(2);
    const auto x = random_tensor({4, 2}, r);
    bn.forward(x, Mode::Eval, r);
    EXPECT_EQ(bn.running_mean()[0], 0.0);
    EXPECT_EQ(bn.running_var()[1], 1.0);
}

TEST(BatchNorm, SingleValueTrainRejected) {
    Rng r(10);
    BatchNorm<double> bn(2);
    EXPECT_THROW(bn.forward(Tensor<double>({1, 2}), Mode::Train, r), InvalidArgument);
    EXPECT_NO_THROW(bn.forward(Tensor<double>({1, 2}), Mode::Eval, r));
    EXPECT_THROW(bn.infer(Tensor<double>({1, 3})), InvalidArgument);
}

// ---------------------------------------------------------------------------
// ReLU, MaxPool, Flatten, Dropout

TEST(ReLU, ClampsNegatives) {
    ReLU<double> relu;
    const Tensor<double> x({1, 4}, std::vector<double>{-1.0, 0.0, 0.5, 3.0});
    const auto y = relu.infer(x);
    EXPECT_EQ(y.values()[0], 0.0);
    EXPECT_EQ(y.values()[1], 0.0);
    EXPECT_EQ(y.values()[2], 0.5);
    EXPECT_EQ(y.values()[3], 3.0);
}

TEST(MaxPool, PicksWindowMaximum) {
    MaxPool2d<double> mp;
    const Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto y = mp.infer(x);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_EQ(y[0], 4.0);
}

TEST(MaxPool, ConstantInputAndGradientRouting) {
    MaxPool2d<double> mp;
    Rng r(11);
    const Tensor<double> x({1, 1, 4, 4}, 7.0);
    const auto y = mp.forward(x, Mode::Train, r);
    for (double v : y.values()) EXPECT_EQ(v, 7.0);
    const auto g = mp.backward(Tensor<double>({1, 1, 2, 2}, 1.0));
    double total = 0.0;
    for (double v : g.values()) total += v;
    EXPECT_EQ(total, 4.0);
}

TEST(MaxPool, OddDimensionRejectedAndHalving) {
    MaxPool2d<float> mp;
    EXPECT_THROW(mp.infer(Tensor<float>({1, 1, 5, 4})), InvalidArgument);
    EXPECT_EQ(mp.infer(Tensor<float>({1, 4, 244, 244})).shape(), (Shape{1, 4, 122, 122}));
    EXPECT_THROW(MaxPool2d<float>(3, 2), InvalidArgument);
}

TEST(Flatten, KeepsBatchAxis) {
    Flatten<float> f;
    EXPECT_EQ(f.infer(Tensor<float>({3, 4, 122, 122})).shape(), (Shape{3, 59536}));
}

TEST(Dropout, EvalIsIdentity) {
    Dropout<double> d(0.3);
    Rng r(12);
    const auto x = random_tensor({4, 8}, r);
    EXPECT_EQ(d.forward(x, Mode::Eval, r), x);
    EXPECT_EQ(d.infer(x), x);
}

TEST(Dropout, ZeroRateIsIdentity) {
    Dropout<double> d(0.0);
    Rng r(13);
    const auto x = random_tensor({4, 8}, r);
    EXPECT_EQ(d.forward(x, Mode::Train, r), x);
}

TEST(Dropout, TrainStatistics) {
    Dropout<double> d(0.3);
    Rng r(14);
    const Tensor<double> x({1000, 1000}, 1.0);
    const auto y = d.forward(x, Mode::Train, r);
    std::size_t zeros = 0;
    double sum = 0.0;
    for (double v : y.values()) {
        if (v == 0.0)
            ++zeros;
        else
            EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
        sum += v;
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.3, 0.003);
    EXPECT_NEAR(sum / 1e6, 1.0, 0.005);
}

TEST(Dropout, RateRange) {
    EXPECT_THROW(Dropout<float>(1.0), InvalidArgument);
    EXPECT_THROW(Dropout<float>(-0.1), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Gradient checks

TEST(GradientCheck, Linear) {
    Rng r(20);
    Network<double> net;
    randomize(net.add<Linear<double>>(5, 3), r);
    const auto x = random_tensor({4, 5}, r);
    const auto res = gradient_check(net, x, random_projection({4, 3}, r));
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
    EXPECT_EQ(res.checked + res.skipped, 15u + 3u + 20u);
    EXPECT_EQ(res.skipped, 0u);
}

TEST(GradientCheck, SoftmaxCrossEntropy) {
    Rng r(21);
    Network<double> net;
    randomize(net.add<Linear<double>>(4, 3), r);
    const auto x = random_tensor({5, 4}, r);
    const auto res = gradient_check(net, x, cross_entropy_objective({0, 2, 1, 1, 0}));
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(GradientCheck, ConvBatchNormMaxPool) {
    Rng r(22);
    Network<double> net;
    randomize(net.add<Conv2d<double>>(2, 3, 3, 1, 1), r);
    net.add<BatchNorm<double>>(3);
    net.add<MaxPool2d<double>>();
    const auto x = random_tensor({3, 2, 6, 6}, r);
    const auto res = gradient_check(net, x, random_projection({3, 3, 3, 3}, r));
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(GradientCheck, StridedConv) {
    Rng r(23);
    Network<double> net;
    randomize(net.add<Conv2d<double>>(1, 2, 3, 2, 1), r);
    const auto x = random_tensor({2, 1, 7, 7}, r);
    const auto res = gradient_check(net, x, random_projection({2, 2, 4, 4}, r));
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(GradientCheck, BatchNormTrainAndEval) {
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        Rng r(24);
        Network<double> net;
        auto& bn = net.add<BatchNorm<double>>(4);
        randomize(bn, r);
        bn.running_mean().fill(0.2);
        bn.running_var().fill(1.7);
        const auto x = random_tensor({6, 4}, r, -2.0, 3.0);
        const auto res = gradient_check(net, x, random_projection({6, 4}, r), kGradCheckStep, mode);
        EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
    }
}

TEST(GradientCheck, ReLUAndDropout) {
    Rng r(25);
    Network<double> net;
    randomize(net.add<Linear<double>>(6, 8), r);
    net.add<ReLU<double>>();
    net.add<Dropout<double>>(0.3);
    const auto x = random_tensor({4, 6}, r);
    const auto res = gradient_check(net, x, random_projection({4, 8}, r));
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(GradientCheck, SkipsProbesAcrossAKink) {
    Network<double> net;
    auto& lin = net.add<Linear<double>>(1, 1);
    lin.weight()[0] = 1.0;
    lin.bias()[0] = 0.0;
    net.add<ReLU<double>>();
    // pre-activation exactly at the kink for the single input
    const Tensor<double> x({1, 1}, std::vector<double>{0.0});
    Rng r(27);
    const auto res = gradient_check(net, x, random_projection({1, 1}, r));
    EXPECT_GT(res.skipped, 0u);
}

TEST(GradientCheck, DetectsABrokenGradient) {
    Rng r(26);
    Network<double> net;
    randomize(net.add<Linear<double>>(3, 2), r);
    const auto x = random_tensor({2, 3}, r);
    // Objective whose reported gradient is off by a factor of two.
    const Objective wrong = [](const Tensor<double>& out, Tensor<double>& grad) {
        grad = Tensor<double>(out.shape(), 2.0);
        double s = 0.0;
        for (double v : out.values()) s += v;
        return s;
    };
    EXPECT_GT(gradient_check(net, x, wrong).max_rel_error, 0.1);
}
