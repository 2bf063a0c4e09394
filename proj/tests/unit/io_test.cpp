#include <agnet/checkpoint.hpp>
#include <agnet/config.hpp>
#include <agnet/error.hpp>
#include <agnet/tensor_io.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace agnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name)
{
    const fs::path dir = fs::temp_directory_path() / "agnet_io_test";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_bytes(const fs::path &p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void write_bytes(const fs::path &p, const std::string &bytes)
{
    std::ofstream os(p, std::ios::binary);
    os << bytes;
}

} // namespace

TEST(Agt1, RoundTripAndByteLayout)
{
    Tensor t(Shape{2, 3}, {1, -2, 3.5f, 0, 1e-3f, 7});
    std::stringstream ss;
    write_agt1(ss, t);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 4u + 4 + 2 * 4 + 6 * 4);
    EXPECT_EQ(bytes.substr(0, 4), "AGT1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
    const Tensor back = read_agt1(ss);
    EXPECT_EQ(back.shape(), t.shape());
    for (int64_t i = 0; i < t.numel(); ++i)
        EXPECT_EQ(back[i], t[i]);
}

TEST(Agt1, RejectsMalformedStreams)
{
    std::stringstream bad_magic("AGT2\x01\x00\x00\x00");
    EXPECT_THROW(read_agt1(bad_magic), DataError);
    Tensor t(Shape{4}, Scalar(1));
    std::stringstream ss;
    write_agt1(ss, t);
    std::stringstream truncated(ss.str().substr(0, ss.str().size() - 3));
    EXPECT_THROW(read_agt1(truncated), DataError);
    EXPECT_THROW(read_agt1(scratch("missing.agt1")), DataError);
}

TEST(Pgm, HeaderAndNormalization)
{
    Tensor m(Shape{1, 1, 2, 2}, {0, 1, 2, 4});
    const fs::path p = scratch("map.pgm");
    write_pgm(p, m);
    const std::string bytes = read_bytes(p);
    const std::string header = "P5\n2 2\n255\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    ASSERT_EQ(bytes.size(), header.size() + 4);
    EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 3]), 255);
    EXPECT_THROW(write_pgm(p, Tensor(Shape{2, 2, 2})), DimensionError);
}

TEST(Config, DefaultsParseAndReject)
{
    const RunConfig d;
    EXPECT_EQ(d.get("variant"), "ag");
    EXPECT_EQ(d.get_int("n_initial"), 8);
    EXPECT_DOUBLE_EQ(d.get_double("lr0"), 0.1);
    const RunConfig c = RunConfig::parse("# comment\n\nvariant = sononet\n  epochs=12  \n");
    EXPECT_EQ(c.get("variant"), "sononet");
    EXPECT_EQ(c.get_int("epochs"), 12);
    EXPECT_THROW(RunConfig::parse("no_such_key = 1\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("just text\n"), ConfigError);
    EXPECT_THROW(c.get_int("variant"), ConfigError);
    RunConfig e;
    e.set("augment", "maybe");
    EXPECT_THROW(e.get_bool("augment"), ConfigError);
}

TEST(Config, DumpRoundTripsEveryKey)
{
    RunConfig c;
    c.set("seed", "42");
    c.set("donor", "x/y.agck");
    const RunConfig back = RunConfig::parse(c.dump());
    for (const auto &k : config_keys())
        EXPECT_EQ(back.get(k.name), c.get(k.name)) << k.name;
}

TEST(Checkpoint, RoundTripPreservesForwardBitwise)
{
    ModelSpec spec;
    spec.seed = 3;
    Model m(spec);
    // Non-trivial running statistics.
    std::mt19937_64 rng(1);
    Tensor x(Shape{4, 1, 64, 80});
    std::normal_distribution<double> dist(0, 1);
    for (auto &v : x.data())
        v = static_cast<Scalar>(dist(rng));
    (void)m.forward(x, true);
    Tape::current().clear();

    RunConfig cfg;
    spec.to_config(cfg);
    const fs::path p = scratch("model.agck");
    save_checkpoint(m, p, cfg);
    Model back = load_checkpoint(p);
    const ForwardOutput a = m.forward(x, false), b = back.forward(x, false);
    for (int64_t i = 0; i < a.scores.numel(); ++i)
        ASSERT_EQ(a.scores[i], b.scores[i]);
    for (size_t s = 0; s < a.attention.size(); ++s)
        for (int64_t i = 0; i < a.attention[s].coefficients.numel(); ++i)
            ASSERT_EQ(a.attention[s].coefficients[i], b.attention[s].coefficients[i]);
}

TEST(Checkpoint, EchoCarriesConfigAndState)
{
    ModelSpec spec;
    spec.variant = Variant::Sononet;
    Model m(spec);
    RunConfig cfg;
    spec.to_config(cfg);
    cfg.set("epochs", "17");
    const CheckpointData data = make_checkpoint(m, cfg, {}, {{"epoch", "5"}, {"best_f1", "0.5"}});
    const fs::path p = scratch("state.agck");
    write_checkpoint(p, data);
    const CheckpointData back = read_checkpoint(p);
    EXPECT_EQ(back.config().get_int("epochs"), 17);
    EXPECT_EQ(back.state().at("epoch"), "5");
    EXPECT_EQ(back.tensors.size(), data.tensors.size());
    EXPECT_NE(back.find(data.tensors.front().first), nullptr);
    EXPECT_EQ(back.find("no.such.tensor"), nullptr);
}

TEST(Checkpoint, TruncationAndCorruptionRaiseDataError)
{
    ModelSpec spec;
    spec.variant = Variant::Sononet;
    spec.n_initial = 4;
    Model m(spec);
    RunConfig cfg;
    spec.to_config(cfg);
    const fs::path p = scratch("trunc.agck");
    save_checkpoint(m, p, cfg);
    const std::string bytes = read_bytes(p);
    for (size_t cut : {size_t{2}, size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        write_bytes(p, bytes.substr(0, cut));
        EXPECT_THROW(read_checkpoint(p), DataError) << "cut at " << cut;
    }
    std::string bad = bytes;
    bad[0] = 'X';
    write_bytes(p, bad);
    EXPECT_THROW(read_checkpoint(p), DataError);
}

TEST(Checkpoint, AssignStateChecksEverythingFirst)
{
    ModelSpec small;
    small.n_initial = 4;
    ModelSpec large;
    large.n_initial = 8;
    Model a(small), b(large);
    RunConfig cfg;
    large.to_config(cfg);
    const CheckpointData data = make_checkpoint(b, cfg);
    const Tensor before = a.blocks()[0][0].weight.clone();
    EXPECT_THROW(assign_state(a, data), DataError);
    for (int64_t i = 0; i < before.numel(); ++i)
        EXPECT_EQ(a.blocks()[0][0].weight[i], before[i]);
}
