#include <agnet/data.hpp>
#include <agnet/localization.hpp>
#include <agnet/model.hpp>

#include <benchmark/benchmark.h>

#include <cmath>

using namespace agnet;

namespace {

Tensor blob_map(int h, int w, double cx, double cy, double sigma)
{
    Tensor t({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t[y * w + x] = static_cast<Scalar>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma)));
    return t;
}

void BM_ExtractBbox(benchmark::State &state)
{
    const std::vector<Tensor> maps{blob_map(16, 20, 6, 5, 2), blob_map(8, 10, 3, 2.5, 1.2), blob_map(4, 5, 1.5, 1.2, 0.8)};
    for (auto _ : state)
        benchmark::DoNotOptimize(extract_bbox(maps, 64, 80));
}
BENCHMARK(BM_ExtractBbox)->Unit(benchmark::kMicrosecond);

void BM_LocalizeBatch(benchmark::State &state)
{
    ModelSpec spec;
    Model m(spec);
    SyntheticConfig cfg;
    cfg.n_per_class = 4;
    std::vector<Sample> samples;
    for (int i = 0; i < 16; ++i)
        samples.push_back(synthesize_sample(cfg, i));
    for (auto _ : state)
        benchmark::DoNotOptimize(localize(m, samples));
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_LocalizeBatch)->Unit(benchmark::kMillisecond);

} // namespace
