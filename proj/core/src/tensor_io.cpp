#include <agnet/tensor_io.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace agnet::inline AGNET_ABI {

namespace le {

void put_u32(std::ostream &os, uint32_t v)
{
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
                                static_cast<char>((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}

void put_f32(std::ostream &os, float v)
{
    put_u32(os, std::bit_cast<uint32_t>(v));
}

uint32_t get_u32(std::istream &is)
{
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char *>(b.data()), 4))
        throw DataError("unexpected end of stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

float get_f32(std::istream &is)
{
    return std::bit_cast<float>(get_u32(is));
}

} // namespace le

namespace {
constexpr std::array<char, 4> kMagic{'A', 'G', 'T', '1'};
constexpr uint32_t kMaxDims = 8;
} // namespace

void write_agt1(std::ostream &os, const Tensor &t)
{
    os.write(kMagic.data(), 4);
    le::put_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int64_t e : t.shape())
        le::put_u32(os, static_cast<uint32_t>(e));
    for (Scalar v : t.data())
        le::put_f32(os, static_cast<float>(v));
}

void write_agt1(const std::filesystem::path &path, const Tensor &t)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    write_agt1(os, t);
    if (!os)
        throw DataError("write failed: " + path.string());
}

Tensor read_agt1(std::istream &is)
{
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic)
        throw DataError("bad AGT1 magic");
    const uint32_t ndim = le::get_u32(is);
    if (ndim == 0 || ndim > kMaxDims)
        throw DataError("AGT1 rank " + std::to_string(ndim) + " out of range");
    Shape shape(ndim);
    for (auto &e : shape) {
        e = le::get_u32(is);
        if (e == 0)
            throw DataError("AGT1 zero extent");
    }
    const int64_t n = shape_numel(shape);
    std::vector<char> raw(static_cast<size_t>(n) * 4);
    if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size())))
        throw DataError("AGT1 payload truncated");
    std::vector<Scalar> values(static_cast<size_t>(n));
    for (size_t i = 0; i < values.size(); ++i) {
        const auto *b = reinterpret_cast<const unsigned char *>(raw.data() + 4 * i);
        const uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
                           (static_cast<uint32_t>(b[3]) << 24);
        values[i] = static_cast<Scalar>(std::bit_cast<float>(u));
    }
    return Tensor(std::move(shape), std::move(values));
}

Tensor read_agt1(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open " + path.string());
    try {
        return read_agt1(is);
    } catch (const DataError &e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_pgm(const std::filesystem::path &path, const Tensor &map)
{
    if (map.ndim() < 2)
        throw DimensionError("write_pgm needs at least 2 axes");
    const int64_t H = map.dim(-2), W = map.dim(-1);
    if (H * W != map.numel())
        throw DimensionError("write_pgm: leading axes must be 1, got " + shape_str(map.shape()));
    Scalar peak = 0;
    for (Scalar v : map.data())
        peak = std::max(peak, v);
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    os << "P5\n" << W << ' ' << H << "\n255\n";
    for (Scalar v : map.data()) {
        const double u = peak > 0 ? std::clamp(static_cast<double>(v) / static_cast<double>(peak), 0.0, 1.0) : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
    }
}

} // namespace agnet::inline AGNET_ABI
