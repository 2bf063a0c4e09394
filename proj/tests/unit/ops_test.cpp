#include "oracles.hpp"

#include <agnet/error.hpp>
#include <agnet/ops.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace agnet;

namespace {

Tensor random_tensor(const Shape &shape, std::mt19937_64 &rng)
{
    Tensor t(shape);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (auto &v : t.data())
        v = static_cast<Scalar>(dist(rng));
    return t;
}

oracle::Vec as_vec(const Tensor &t)
{
    return {t.data().begin(), t.data().end()};
}

// Float results against double oracles: error relative to the magnitude of the terms summed.
constexpr double kFloatTol = 2e-5;

} // namespace

TEST(Conv2d, HandComputedExample)
{
    const Tensor ones(Shape{1, 1, 3, 3}, Scalar(1));
    const Tensor y = conv2d(ones, Tensor(Shape{1, 1, 3, 3}, Scalar(1)), Tensor(Shape{1}, Scalar(0.5)), 1, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    EXPECT_FLOAT_EQ(y[0], 4.5f); // corner sees 4 pixels
    EXPECT_FLOAT_EQ(y[1], 6.5f);
    EXPECT_FLOAT_EQ(y[4], 9.5f);

    Tensor x(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor id = conv2d(x, Tensor(Shape{1, 1, 1, 1}, Scalar(1)), Tensor{});
    for (int64_t i = 0; i < x.numel(); ++i)
        EXPECT_EQ(id[i], x[i]);
    EXPECT_THROW(conv2d(x, Tensor(Shape{1, 1, 2, 2}, Scalar(1)), Tensor{}), DimensionError);
}

TEST(Conv2d, SamePaddingKeepsExtent)
{
    std::mt19937_64 rng(3);
    const Tensor y = conv2d(random_tensor({2, 3, 8, 10}, rng), random_tensor({5, 3, 3, 3}, rng), Tensor{}, 1, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 5, 8, 10}));
}

TEST(Conv2d, MatchesOracleOnRandomInstances)
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> small(1, 4), extent(3, 9), kern(1, 2), coin(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = small(rng), C = small(rng), O = small(rng), H = extent(rng), W = extent(rng);
        const int k = 2 * kern(rng) - 1, stride = 1 + coin(rng), pad = coin(rng) ? k / 2 : 0;
        const Tensor x = random_tensor({N, C, H, W}, rng), w = random_tensor({O, C, k, k}, rng), b = random_tensor({O}, rng);
        int Ho = 0, Wo = 0;
        const auto ref = oracle::conv2d(as_vec(x), as_vec(w), as_vec(b), N, C, H, W, O, k, stride, pad, Ho, Wo);
        const Tensor y = conv2d(x, w, b, stride, pad);
        ASSERT_EQ(y.shape(), (Shape{N, O, Ho, Wo})) << "trial " << trial;
        EXPECT_LT(oracle::max_abs_diff(as_vec(y), ref), kFloatTol * C * k * k) << "trial " << trial;
    }
}

TEST(Conv2d, RejectsChannelMismatch)
{
    std::mt19937_64 rng(1);
    EXPECT_THROW(conv2d(random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 1, 3, 3}, rng), Tensor{}), DimensionError);
    EXPECT_THROW(conv2d(random_tensor({1, 2, 4}, rng), random_tensor({3, 2, 3, 3}, rng), Tensor{}), DimensionError);
}

TEST(MaxPool, MatchesOracleOnRandomInstances)
{
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> small(1, 3), half(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = small(rng), C = small(rng), H = 2 * half(rng), W = 2 * half(rng);
        const Tensor x = random_tensor({N, C, H, W}, rng);
        int Ho = 0, Wo = 0;
        const auto ref = oracle::max_pool2d(as_vec(x), N, C, H, W, 2, 2, Ho, Wo);
        const Tensor y = max_pool2d(x);
        ASSERT_EQ(y.shape(), (Shape{N, C, Ho, Wo}));
        EXPECT_EQ(oracle::max_abs_diff(as_vec(y), ref), 0.0);
    }
}

TEST(MaxPool, TieRoutesGradientToFirstMaximum)
{
    Tensor x(Shape{1, 1, 2, 2}, {3, 3, 1, 3});
    x.set_requires_grad(true);
    Tape::current().clear();
    backward(sum(max_pool2d(x)));
    Tape::current().clear();
    const auto g = x.grad();
    EXPECT_EQ(g[0], 1);
    EXPECT_EQ(g[1], 0);
    EXPECT_EQ(g[3], 0);
}

TEST(Linear, MatchesOracleOnRandomInstances)
{
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> dim(1, 9);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = dim(rng), D = dim(rng), O = dim(rng);
        const Tensor x = random_tensor({N, D}, rng), w = random_tensor({O, D}, rng), b = random_tensor({O}, rng);
        const auto ref = oracle::linear(as_vec(x), as_vec(w), as_vec(b), N, D, O);
        EXPECT_LT(oracle::max_abs_diff(as_vec(linear(x, w, b)), ref), kFloatTol * D);
    }
}

TEST(GlobalAvgPool, MatchesOracleOnRandomInstances)
{
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> dim(1, 7);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = dim(rng), C = dim(rng), H = dim(rng), W = dim(rng);
        const Tensor x = random_tensor({N, C, H, W}, rng);
        const Tensor y = global_avg_pool(x);
        ASSERT_EQ(y.shape(), (Shape{N, C}));
        EXPECT_LT(oracle::max_abs_diff(as_vec(y), oracle::global_avg_pool(as_vec(x), N, C, H * W)), kFloatTol);
    }
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats)
{
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({4, 2, 3, 3}, rng);
    const Tensor gamma(Shape{2}, Scalar(1)), beta(Shape{2}, Scalar(0));
    BatchNormStats stats(2);
    const Tensor y = batch_norm2d(x, gamma, beta, stats, true);
    for (int c = 0; c < 2; ++c) {
        double m = 0, s = 0, xm = 0, xs = 0;
        int count = 0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 9; ++i) {
                const int64_t at = (n * 2 + c) * 9 + i;
                m += y[at];
                s += y[at] * y[at];
                xm += x[at];
                xs += x[at] * x[at];
                ++count;
            }
        m /= count;
        EXPECT_NEAR(m, 0, 1e-5);
        EXPECT_NEAR(s / count - m * m, 1, 1e-3);
        xm /= count;
        const double unbiased = (xs - count * xm * xm) / (count - 1);
        EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-6);
        EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * unbiased, 1e-5);
    }
}

TEST(BatchNorm, EvalUsesRunningStats)
{
    Tensor x(Shape{1, 1, 1, 2}, {1, 3});
    BatchNormStats stats(1);
    stats.mean[0] = 1;
    stats.var[0] = 4;
    const Tensor y = batch_norm2d(x, Tensor(Shape{1}, Scalar(2)), Tensor(Shape{1}, Scalar(1)), stats, false, kBatchNormMomentum, 0);
    EXPECT_FLOAT_EQ(y[0], 1);
    EXPECT_FLOAT_EQ(y[1], 3);
    EXPECT_FLOAT_EQ(stats.mean[0], 1);
}

TEST(Upsample, ConstantStaysConstantAndIdentityAtSameSize)
{
    std::mt19937_64 rng(6);
    const Tensor c(Shape{1, 2, 3, 4}, Scalar(0.25));
    const Tensor up = bilinear_upsample2d(c, 12, 16);
    for (auto v : up.data())
        EXPECT_FLOAT_EQ(v, 0.25f);
    const Tensor x = random_tensor({2, 1, 3, 5}, rng);
    const Tensor same = bilinear_upsample2d(x, 3, 5);
    for (int64_t i = 0; i < x.numel(); ++i)
        EXPECT_FLOAT_EQ(same[i], x[i]);
}

TEST(Upsample, HalfPixelInterpolation)
{
    Tensor x(Shape{1, 1, 1, 2}, {0, 1});
    const Tensor y = bilinear_upsample2d(x, 1, 4);
    // Output centres map to input coordinates -0.25, 0.25, 0.75, 1.25 (clamped).
    EXPECT_FLOAT_EQ(y[0], 0);
    EXPECT_FLOAT_EQ(y[1], 0.25f);
    EXPECT_FLOAT_EQ(y[2], 0.75f);
    EXPECT_FLOAT_EQ(y[3], 1);
}

TEST(Softmax, RowsSumToOneAndSurviveLargeLogits)
{
    Tensor x(Shape{2, 3}, {1000, 1001, 1002, -5, 0, 5});
    const Tensor p = softmax(x);
    for (int r = 0; r < 2; ++r) {
        EXPECT_NEAR(p[r * 3] + p[r * 3 + 1] + p[r * 3 + 2], 1, 1e-6);
        EXPECT_TRUE(std::isfinite(p[r * 3]));
    }
    EXPECT_NEAR(p[2], 1 / (1 + std::exp(-1.0) + std::exp(-2.0)), 1e-6);
    const Tensor lp = log_softmax(x);
    EXPECT_NEAR(lp[2], -std::log(1 + std::exp(-1.0) + std::exp(-2.0)), 1e-5);
}

TEST(CrossEntropy, WeightedMeanOfNegativeLogLikelihood)
{
    Tensor logits(Shape{2, 2}, {0, 0, 2, 0});
    const std::vector<int> labels{0, 1};
    const std::vector<Scalar> weights{1, 3};
    const double l0 = std::log(2.0), l1 = std::log(1 + std::exp(2.0));
    EXPECT_NEAR(weighted_cross_entropy(logits, labels).item(), (l0 + l1) / 2, 1e-6);
    EXPECT_NEAR(weighted_cross_entropy(logits, labels, weights).item(), (l0 + 3 * l1) / 4, 1e-6);
    const std::vector<int> bad{0, 2};
    EXPECT_THROW(weighted_cross_entropy(logits, bad), DimensionError);
}

TEST(Log, FloorBlocksGradient)
{
    Tensor x(Shape{2}, {0, 2});
    x.set_requires_grad(true);
    Tape::current().clear();
    const Tensor y = log(x, Scalar(1e-3));
    EXPECT_NEAR(y[0], std::log(1e-3), 1e-4);
    backward(sum(y));
    Tape::current().clear();
    EXPECT_EQ(x.grad()[0], 0);
    EXPECT_FLOAT_EQ(x.grad()[1], 0.5f);
}

TEST(Tape, NoGradGuardRecordsNothing)
{
    Tensor x(Shape{3}, Scalar(1));
    x.set_requires_grad(true);
    Tape::current().clear();
    {
        NoGradGuard guard;
        (void)relu(scale(x, 2));
        EXPECT_EQ(Tape::current().size(), 0u);
    }
    (void)relu(scale(x, 2));
    EXPECT_EQ(Tape::current().size(), 2u);
    Tape::current().clear();
}

TEST(Tape, LeafGradientsAccumulateAcrossPasses)
{
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    for (int pass = 0; pass < 2; ++pass) {
        Tape::current().clear();
        backward(sum(mul(x, x)));
    }
    Tape::current().clear();
    EXPECT_FLOAT_EQ(x.grad()[0], 4);
    EXPECT_FLOAT_EQ(x.grad()[1], 8);
    x.zero_grad();
    EXPECT_EQ(x.grad()[1], 0);
}

TEST(Tape, BackwardNeedsScalarConnectedLoss)
{
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    Tape::current().clear();
    EXPECT_THROW(backward(scale(x, 2)), DimensionError);
    EXPECT_THROW(backward(Tensor::scalar(1)), Error);
    Tape::current().clear();
}

TEST(Tape, BackwardCounterCountsSweeps)
{
    Tensor x(Shape{1}, {1});
    x.set_requires_grad(true);
    const uint64_t before = backward_pass_count();
    Tape::current().clear();
    backward(sum(x));
    Tape::current().clear();
    EXPECT_EQ(backward_pass_count(), before + 1);
}
