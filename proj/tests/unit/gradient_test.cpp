#include "grad_check.hpp"

#include <gtest/gtest.h>

static_assert(sizeof(agnet::Scalar) == sizeof(double), "gradient tests run against the double build");

namespace {

class LayerGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(LayerGradient, MatchesCentralDifferences)
{
    auto c = gradcases::make_case(GetParam(), 17);
    std::mt19937_64 rng(1);
    const auto coords = gradcheck::pick_coords(c, 1 << 20, rng);
    const auto full = gradcheck::analytic(c);
    EXPECT_LE(gradcheck::invariant_grad_max(c), 1e-10 * gradcheck::grad_max(full));
    const auto a = gradcheck::select(full, coords);
    const auto n = gradcheck::numeric(c, coords, 1e-6);
    const auto r = gradcheck::compare(a, n);
    EXPECT_LT(r.rel_error, 1e-4) << "worst input " << r.worst_input;
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradient, ::testing::ValuesIn(gradcases::layer_case_names()),
                         [](const auto &info) { return info.param; });

class ModelGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(ModelGradient, SampledCoordinatesMatchCentralDifferences)
{
    auto c = gradcases::make_case(GetParam(), 23);
    std::mt19937_64 rng(2);
    const auto coords = gradcheck::pick_coords(c, 3, rng);
    const auto full = gradcheck::analytic(c);
    EXPECT_LE(gradcheck::invariant_grad_max(c), 1e-10 * gradcheck::grad_max(full));
    const auto a = gradcheck::select(full, coords);
    // Below the spacing of activation kinks in the full network.
    const auto n = gradcheck::numeric(c, coords, 1e-7);
    const auto r = gradcheck::compare(a, n);
    EXPECT_LT(r.rel_error, 1e-4) << "worst input " << r.worst_input;
}

INSTANTIATE_TEST_SUITE_P(Losses, ModelGradient, ::testing::ValuesIn(gradcases::model_case_names()),
                         [](const auto &info) { return info.param; });

TEST(GradCheck, CompareFlagsAWrongGradient)
{
    const gradcheck::Values a{{1.0, 2.0}}, n{{1.0, 2.5}};
    EXPECT_GT(gradcheck::compare(a, n).rel_error, 0.1);
    EXPECT_EQ(gradcheck::compare(a, a).rel_error, 0.0);
}

} // namespace
