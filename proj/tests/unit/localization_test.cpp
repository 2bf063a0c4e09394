#include <agnet/error.hpp>
#include <agnet/localization.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

using namespace agnet;

namespace {

Tensor blob_map(int H, int W, const std::vector<std::array<double, 4>> &blobs) // cx, cy, sigma, amplitude
{
    Tensor m(Shape{H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (const auto &b : blobs)
                m[y * W + x] += static_cast<Scalar>(b[3] * std::exp(-((x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1])) / (2 * b[2] * b[2])));
    return m;
}

// Brute force over every tuple of components, overlap tested on pixel sets.
std::optional<BoundingBox> pairing_oracle(const std::vector<Tensor> &maps, const LocalizationOptions &opts)
{
    std::vector<std::vector<Component>> comps;
    for (const auto &m : maps) {
        const Tensor b = gaussian_blur(m, opts.blur_sigma);
        double mx = 0;
        for (auto v : b.data())
            mx = std::max(mx, static_cast<double>(v));
        comps.push_back(connected_components(b, opts.threshold_frac * mx));
    }
    std::vector<size_t> idx(comps.size(), 0), best;
    double best_score = -1;
    for (;;) {
        bool ok = true;
        double score = 0;
        for (size_t a = 0; a < comps.size() && ok; ++a) {
            score += comps[a][idx[a]].activation;
            const std::set<int> pa(comps[a][idx[a]].pixels.begin(), comps[a][idx[a]].pixels.end());
            for (size_t b = a + 1; b < comps.size() && ok; ++b) {
                bool shared = false;
                for (int p : comps[b][idx[b]].pixels)
                    shared = shared || pa.count(p) > 0;
                ok = shared;
            }
        }
        if (ok && score > best_score) {
            best_score = score;
            best = idx;
        }
        size_t l = 0;
        while (l < idx.size() && ++idx[l] == comps[l].size())
            idx[l++] = 0;
        if (l == idx.size())
            break;
    }
    if (best.empty())
        return std::nullopt;
    BoundingBox box{1 << 30, 1 << 30, 0, 0};
    for (size_t l = 0; l < comps.size(); ++l) {
        const BoundingBox &b = comps[l][best[l]].box;
        box = {std::min(box.x0, b.x0), std::min(box.y0, b.y0), std::max(box.x1, b.x1), std::max(box.y1, b.y1)};
    }
    return box;
}

} // namespace

TEST(Iou, KnownValues)
{
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 3, 2}), 2.0 / 6);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {2, 2, 4, 4}), 0.0);
}

TEST(Cam, WeightedSumClampedAtZero)
{
    Tensor f(Shape{2, 1, 2}, {1, 2, 3, -4});
    Tensor w(Shape{2, 2}, {1, 1, 2, 0});
    const Tensor c0 = cam(f, w, 0);
    EXPECT_FLOAT_EQ(c0[0], 4);
    EXPECT_FLOAT_EQ(c0[1], 0);
    EXPECT_FLOAT_EQ(cam(f, w, 0, false)[1], -2);
    EXPECT_FLOAT_EQ(cam(f, w, 1)[1], 4);
    EXPECT_THROW(cam(f, w, 2), DimensionError);
}

TEST(CombineAgAll, NormalizesEachMapAndClamps)
{
    Tensor a(Shape{2, 2}, {0, 2, 0, 0}), b(Shape{2, 2}, {0, 0.5f, 0, 0.25f}), zero(Shape{2, 2});
    const Tensor c = combine_ag_all({a, b, zero}, 2, 2);
    EXPECT_FLOAT_EQ(c[1], 2.0f / 3);
    EXPECT_FLOAT_EQ(c[3], 0.5f / 3);
    EXPECT_FLOAT_EQ(c[0], 0);
    for (auto v : c.data()) {
        EXPECT_GE(v, 0);
        EXPECT_LE(v, 1);
    }
}

TEST(Blur, PreservesMassAwayFromEdgesAndConstants)
{
    Tensor m(Shape{21, 21});
    m[10 * 21 + 10] = 1;
    const Tensor b = gaussian_blur(m, 1.5);
    double s = 0;
    for (auto v : b.data())
        s += v;
    EXPECT_NEAR(s, 1, 1e-6);
    EXPECT_GT(b[10 * 21 + 10], b[10 * 21 + 11]);
    const Tensor flat = gaussian_blur(Tensor(Shape{5, 7}, Scalar(0.3)), 2);
    for (auto v : flat.data())
        EXPECT_NEAR(v, 0.3, 1e-6);
}

TEST(Components, EightConnectivityAndActivation)
{
    Tensor m(Shape{3, 4}, {1, 0, 0, 0, 0, 1, 0, 0.5f, 0, 0, 0, 0.5f});
    const auto comps = connected_components(m, 0.5);
    ASSERT_EQ(comps.size(), 2u);
    EXPECT_EQ(comps[0].pixels.size(), 2u); // diagonal neighbours join
    EXPECT_DOUBLE_EQ(comps[0].activation, 2.0);
    EXPECT_EQ(comps[0].box, (BoundingBox{0, 0, 2, 2}));
    EXPECT_DOUBLE_EQ(comps[1].activation, 1.0);
    EXPECT_EQ(comps[1].box, (BoundingBox{3, 1, 4, 3}));
}

TEST(ExtractBbox, SingleBlobGivesTightBoxAroundIt)
{
    const Tensor m = blob_map(64, 80, {{30, 20, 3, 1}});
    const auto box = extract_bbox({m}, 64, 80);
    ASSERT_TRUE(box.has_value());
    EXPECT_LT(std::abs(box->center_x() - 30.5), 1.0);
    EXPECT_LT(std::abs(box->center_y() - 20.5), 1.0);
}

TEST(ExtractBbox, PicksTheBlobThatCoOccursAcrossScales)
{
    // Map 1 peaks at a decoy; only the weaker blob at (50, 40) appears in both maps.
    const Tensor m1 = blob_map(64, 80, {{15, 15, 3, 1.0}, {50, 40, 3, 0.8}});
    const Tensor m2 = blob_map(64, 80, {{52, 41, 4, 1.0}});
    LocalizationOptions o;
    const auto box = extract_bbox({m1, m2}, 64, 80, o);
    ASSERT_TRUE(box.has_value());
    EXPECT_GT(box->x0, 35);
    EXPECT_GT(box->y0, 25);
    EXPECT_EQ(box, pairing_oracle({m1, m2}, o));
}

TEST(ExtractBbox, MatchesPairingOracleOnRandomBlobMaps)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> x(5, 75), y(5, 59), s(1.5, 4), a(0.3, 1);
    std::uniform_int_distribution<int> count(1, 3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Tensor> maps;
        for (int m = 0; m < 3; ++m) {
            std::vector<std::array<double, 4>> blobs;
            for (int k = count(rng); k > 0; --k)
                blobs.push_back({x(rng), y(rng), s(rng), a(rng)});
            maps.push_back(blob_map(64, 80, blobs));
        }
        LocalizationOptions o;
        o.blur_sigma = 1;
        EXPECT_EQ(extract_bbox(maps, 64, 80, o), pairing_oracle(maps, o)) << "trial " << trial;
    }
}

TEST(ExtractBbox, InvariantToMapScaling)
{
    const Tensor m1 = blob_map(64, 80, {{20, 30, 3, 1}, {60, 12, 2, 0.7}});
    const Tensor m2 = blob_map(64, 80, {{21, 31, 3, 0.4}});
    Tensor s1 = m1.clone(), s2 = m2.clone();
    for (auto &v : s1.data())
        v *= 7;
    for (auto &v : s2.data())
        v *= 0.01f;
    EXPECT_EQ(extract_bbox({m1, m2}, 64, 80), extract_bbox({s1, s2}, 64, 80));
}

TEST(ExtractBbox, UpsamplesCoarseMapsAndHandlesDegenerateInput)
{
    Tensor coarse(Shape{16, 20});
    coarse[8 * 20 + 10] = 1;
    const auto box = extract_bbox({coarse}, 64, 80);
    ASSERT_TRUE(box.has_value());
    EXPECT_TRUE(box->within(80, 64));
    EXPECT_LT(std::abs(box->center_x() - 42), 3);
    EXPECT_FALSE(extract_bbox({Tensor(Shape{16, 20})}, 64, 80).has_value());
    EXPECT_FALSE(extract_bbox({}, 64, 80).has_value());
}

TEST(ExtractBbox, HigherThresholdNeverGrowsTheBox)
{
    const Tensor m = blob_map(64, 80, {{40, 30, 5, 1}});
    LocalizationOptions lo, hi;
    lo.threshold_frac = 0.3;
    hi.threshold_frac = 0.7;
    const auto a = extract_bbox({m}, 64, 80, lo), b = extract_bbox({m}, 64, 80, hi);
    ASSERT_TRUE(a && b);
    EXPECT_LE(b->area(), a->area());
}

TEST(Metrics, CorrectnessAndRelativeCorrectness)
{
    std::vector<LocalizationResult> rs(4);
    const double ious[4] = {0.9, 0.3, 0.6, 0.2};
    for (int i = 0; i < 4; ++i) {
        rs[static_cast<size_t>(i)].label = i < 3 ? 0 : 1;
        rs[static_cast<size_t>(i)].iou = ious[i];
    }
    const auto rows = localization_metrics(rs);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NEAR(rows[0].mean_iou, 0.6, 1e-12);
    EXPECT_NEAR(rows[0].std_iou, std::sqrt((0.09 + 0.09 + 0.0) / 3), 1e-12);
    EXPECT_NEAR(rows[0].correctness, 2.0 / 3, 1e-12);
    EXPECT_NEAR(rows[0].relative_correctness, 2.0 / 3, 1e-12); // 0.3 is not > 0.45
    EXPECT_TRUE(rs[2].correct);
    EXPECT_FALSE(rs[1].relatively_correct);
    EXPECT_DOUBLE_EQ(rows[1].relative_correctness, 1.0);
    EXPECT_DOUBLE_EQ(rows[1].correctness, 0.0);
    const std::string table = format_localization(rows);
    EXPECT_NE(table.find("IoU mean (std)"), std::string::npos);
}

TEST(Pipeline, NoBackwardPassesAndNoTapeGrowth)
{
    ModelSpec spec;
    spec.n_initial = 4;
    Model m(spec);
    for (auto &p : m.parameters())
        p.tensor.set_requires_grad(true);
    SyntheticConfig c;
    c.n_per_class = 2;
    std::vector<Sample> samples;
    for (int i = 0; i < 10; ++i)
        samples.push_back(synthesize_sample(c, i));
    Tape::current().clear();
    const uint64_t before = backward_pass_count();
    const auto results = localize(m, samples);
    EXPECT_EQ(backward_pass_count(), before);
    EXPECT_EQ(Tape::current().size(), 0u);
    EXPECT_EQ(results.size(), 10u);
    const auto maps = compute_maps(m, samples, 4);
    ASSERT_EQ(maps.size(), 10u);
    EXPECT_EQ(maps[0].gates.size(), 2u);
    EXPECT_EQ(maps[0].cam.shape(), (Shape{4, 5}));
    LocalizationOptions all;
    all.include_cam = true;
    EXPECT_EQ(localization_maps(maps[0], all).size(), 3u);
    EXPECT_EQ(localization_maps(maps[0], LocalizationOptions{}).size(), 2u);
}

TEST(Pipeline, SononetUsesItsClassMap)
{
    ModelSpec spec;
    spec.variant = Variant::Sononet;
    spec.n_initial = 4;
    Model m(spec);
    SyntheticConfig c;
    c.n_per_class = 1;
    const auto maps = compute_maps(m, {synthesize_sample(c, 0)});
    EXPECT_TRUE(maps[0].gates.empty());
    EXPECT_EQ(localization_maps(maps[0], LocalizationOptions{}).size(), 1u);
}
