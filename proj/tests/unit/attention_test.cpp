#include "oracles.hpp"

#include <agnet/attention.hpp>
#include <agnet/error.hpp>
#include <agnet/ops.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace agnet;

namespace {

Tensor random_tensor(const Shape &shape, std::mt19937_64 &rng, double lo = -1, double hi = 1)
{
    Tensor t(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto &v : t.data())
        v = static_cast<Scalar>(dist(rng));
    return t;
}

oracle::Vec as_vec(const Tensor &t)
{
    return {t.data().begin(), t.data().end()};
}

AttentionGateParams random_gate(int c_s, int c_g, int c_int, std::mt19937_64 &rng)
{
    AttentionGateParams p = AttentionGateParams::create(c_s, c_g, c_int, rng);
    p.bg = random_tensor({c_int}, rng);
    p.bpsi = random_tensor({1}, rng);
    return p;
}

} // namespace

TEST(Compatibility, AdditiveMatchesOracle)
{
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> dim(1, 5);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = dim(rng), C = dim(rng), Cg = dim(rng), H = dim(rng), W = dim(rng);
        const bool project = trial % 2 == 0 || Cg != C;
        const Tensor f = random_tensor({N, C, H, W}, rng), g = random_tensor({N, project ? Cg : C}, rng), psi = random_tensor({C}, rng);
        const Tensor wg = project ? random_tensor({C, Cg}, rng) : Tensor{};
        const Tensor c = compatibility_additive(f, g, psi, wg);
        ASSERT_EQ(c.shape(), (Shape{N, 1, H, W}));
        const auto ref = oracle::compat_additive(as_vec(f), as_vec(g), as_vec(psi), project ? as_vec(wg) : oracle::Vec{}, N, C,
                                                 project ? Cg : C, H * W);
        EXPECT_LT(oracle::max_abs_diff(as_vec(c), ref), 1e-5 * (C + Cg + 1));
    }
}

TEST(Compatibility, AdditiveNeedsProjectionForMismatchedWidths)
{
    std::mt19937_64 rng(2);
    EXPECT_THROW(compatibility_additive(random_tensor({1, 3, 2, 2}, rng), random_tensor({1, 4}, rng), random_tensor({3}, rng)), DimensionError);
}

TEST(Compatibility, GatedMatchesOracleForVectorAndGrid)
{
    std::mt19937_64 rng(22);
    std::uniform_int_distribution<int> dim(1, 5);
    for (int trial = 0; trial < 100; ++trial) {
        const bool grid = trial % 2 == 1;
        const int N = dim(rng), C = dim(rng), Cg = dim(rng), Ci = dim(rng), H = dim(rng), W = dim(rng);
        const AttentionGateParams p = random_gate(C, Cg, Ci, rng);
        const Tensor f = random_tensor({N, C, H, W}, rng);
        const Tensor g = grid ? random_tensor({N, Cg, H, W}, rng) : random_tensor({N, Cg}, rng);
        const Tensor c = compatibility_gated(f, g, p);
        ASSERT_EQ(c.shape(), (Shape{N, 1, H, W}));
        const auto ref = oracle::compat_gated(as_vec(f), as_vec(g), grid, as_vec(p.wf), as_vec(p.wg), as_vec(p.bg), as_vec(p.psi), p.bpsi[0], N, C,
                                              Cg, Ci, H * W);
        EXPECT_LT(oracle::max_abs_diff(as_vec(c), ref), 1e-4) << "trial " << trial;
    }
}

TEST(Compatibility, GatedRejectsWrongShapes)
{
    std::mt19937_64 rng(3);
    const AttentionGateParams p = random_gate(3, 4, 2, rng);
    EXPECT_THROW(compatibility_gated(random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 4}, rng), p), DimensionError);
    EXPECT_THROW(compatibility_gated(random_tensor({1, 3, 4, 4}, rng), random_tensor({1, 5}, rng), p), DimensionError);
    EXPECT_THROW(compatibility_gated(random_tensor({1, 3, 4, 4}, rng), random_tensor({1, 4, 2, 2}, rng), p), DimensionError);
}

TEST(AttendPool, MatchesOracle)
{
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> dim(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = dim(rng), C = dim(rng), H = dim(rng), W = dim(rng);
        const Tensor f = random_tensor({N, C, H, W}, rng), a = random_tensor({N, 1, H, W}, rng, 0, 1);
        const Tensor y = attend_pool(f, a);
        ASSERT_EQ(y.shape(), (Shape{N, C}));
        EXPECT_LT(oracle::max_abs_diff(as_vec(y), oracle::attend_pool(as_vec(f), as_vec(a), N, C, H * W)), 1e-5 * H * W);
    }
}

TEST(AttendPool, UniformCoefficientsGiveAveragePooling)
{
    std::mt19937_64 rng(4);
    const Tensor f = random_tensor({2, 3, 4, 5}, rng);
    const Tensor a(Shape{2, 1, 4, 5}, Scalar(1.0 / 20));
    const Tensor y = attend_pool(f, a), gap = global_avg_pool(f);
    for (int64_t i = 0; i < y.numel(); ++i)
        EXPECT_NEAR(y[i], gap[i], 1e-6);
}

TEST(Normalization, MinSumSumsToOneHitsZeroKeepsArgmax)
{
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor s = random_tensor({3, 1, 5, 7}, rng, -4, 4);
        const Tensor a = normalize_attention(s, Normalization::MinSum);
        for (int n = 0; n < 3; ++n) {
            const Scalar *sv = s.ptr() + n * 35;
            const Scalar *av = a.ptr() + n * 35;
            double total = 0;
            for (int i = 0; i < 35; ++i) {
                total += av[i];
                EXPECT_GE(av[i], 0);
            }
            EXPECT_NEAR(total, 1, 1e-5);
            EXPECT_EQ(*std::min_element(av, av + 35), 0);
            EXPECT_EQ(std::max_element(av, av + 35) - av, std::max_element(sv, sv + 35) - sv);
        }
    }
}

TEST(Normalization, MinSumConstantMapFallsBackToUniform)
{
    const Tensor s(Shape{2, 1, 3, 3}, Scalar(0.7));
    const Tensor a = normalize_attention(s, Normalization::MinSum);
    for (auto v : a.data())
        EXPECT_FLOAT_EQ(v, 1.0f / 9);
}

TEST(Normalization, MinSumIsShiftInvariant)
{
    std::mt19937_64 rng(5);
    const Tensor s = random_tensor({1, 1, 4, 4}, rng);
    Tensor shifted = s.clone();
    for (auto &v : shifted.data())
        v += 3;
    const Tensor a = normalize_attention(s, Normalization::MinSum), b = normalize_attention(shifted, Normalization::MinSum);
    for (int64_t i = 0; i < a.numel(); ++i)
        EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Normalization, SoftmaxIsSpatialDistribution)
{
    std::mt19937_64 rng(6);
    const Tensor s = random_tensor({2, 1, 3, 4}, rng, -3, 3);
    const Tensor a = normalize_attention(s, Normalization::Softmax);
    for (int n = 0; n < 2; ++n) {
        double z = 0, total = 0;
        for (int i = 0; i < 12; ++i)
            z += std::exp(static_cast<double>(s[n * 12 + i]));
        for (int i = 0; i < 12; ++i) {
            EXPECT_GT(a[n * 12 + i], 0);
            EXPECT_NEAR(a[n * 12 + i], std::exp(static_cast<double>(s[n * 12 + i])) / z, 1e-6);
            total += a[n * 12 + i];
        }
        EXPECT_NEAR(total, 1, 1e-5);
    }
}

TEST(Normalization, SigmoidIsElementwiseAndUnnormalized)
{
    Tensor s(Shape{1, 1, 1, 3}, {-2, 0, 3});
    const Tensor a = normalize_attention(s, Normalization::Sigmoid);
    EXPECT_NEAR(a[0], 1 / (1 + std::exp(2.0)), 1e-6);
    EXPECT_FLOAT_EQ(a[1], 0.5f);
    EXPECT_NEAR(a[2], 1 / (1 + std::exp(-3.0)), 1e-6);
    EXPECT_GT(a[0] + a[1] + a[2], 1.0f);
}

TEST(Normalization, NamesRoundTrip)
{
    for (auto m : {Normalization::MinSum, Normalization::Softmax, Normalization::Sigmoid})
        EXPECT_EQ(parse_normalization(to_string(m)), m);
    EXPECT_THROW(parse_normalization("tanh"), ConfigError);
}

TEST(GridGate, ShapesAndCoefficientContract)
{
    std::mt19937_64 rng(7);
    const AttentionGateParams p = random_gate(4, 6, 4, rng);
    const Tensor f = random_tensor({2, 4, 8, 10}, rng), g = random_tensor({2, 6, 2, 5}, rng);
    const GateOutput out = grid_gate_forward(f, g, p, Normalization::MinSum, 1);
    EXPECT_EQ(out.attended.shape(), (Shape{2, 4}));
    EXPECT_EQ(out.map.coefficients.shape(), (Shape{2, 1, 8, 10}));
    EXPECT_EQ(out.map.scale, 1);
    for (int n = 0; n < 2; ++n) {
        double total = 0;
        for (int i = 0; i < 80; ++i)
            total += out.map.coefficients[n * 80 + i];
        EXPECT_NEAR(total, 1, 1e-5);
    }
    EXPECT_THROW(grid_gate_forward(f, random_tensor({2, 6, 3, 5}, rng), p), DimensionError);
}

TEST(GridGate, MatchesGatedScoreOnUpsampledSignal)
{
    std::mt19937_64 rng(8);
    const AttentionGateParams p = random_gate(3, 2, 3, rng);
    const Tensor f = random_tensor({1, 3, 4, 4}, rng), g = random_tensor({1, 2, 2, 2}, rng);
    const GateOutput out = grid_gate_forward(f, g, p);
    // W_g is linear and the upsampling weights sum to one, so upsampling g first is equivalent.
    const Tensor direct = compatibility_gated(f, bilinear_upsample2d(g, 4, 4), p);
    for (int64_t i = 0; i < direct.numel(); ++i)
        EXPECT_NEAR(out.map.compatibility[i], direct[i], 1e-5);
}

TEST(GateParams, CountFormula)
{
    std::mt19937_64 rng(9);
    const AttentionGateParams p = AttentionGateParams::create(32, 64, 32, rng);
    EXPECT_EQ(p.count(), gate_param_count(32, 64, 32));
    EXPECT_EQ(gate_param_count(32, 64, 32), 32 * 32 + 32 * 64 + 32 + 32 + 1);
    for (auto v : p.bg.data())
        EXPECT_EQ(v, 0);
}
