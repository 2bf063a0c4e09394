#include <agnet/checkpoint.hpp>
#include <agnet/tensor_io.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace agnet::inline AGNET_ABI {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'G', 'C', 'K'};
constexpr uint32_t kMaxName = 4096;
constexpr uint32_t kMaxEcho = 1u << 24;
const std::string kStatePrefix = "state.";

std::string read_string(std::istream &is, uint32_t limit, const char *what)
{
    const uint32_t len = le::get_u32(is);
    if (len > limit)
        throw DataError(std::string("implausible ") + what + " length " + std::to_string(len));
    std::string s(len, '\0');
    if (len && !is.read(s.data(), len))
        throw DataError(std::string(what) + " truncated");
    return s;
}

} // namespace

const Tensor *CheckpointData::find(const std::string &name) const
{
    const auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto &p) { return p.first == name; });
    return it == tensors.end() ? nullptr : &it->second;
}

RunConfig CheckpointData::config() const
{
    RunConfig cfg;
    for (const auto &[key, value] : parse_key_values(echo))
        if (key.rfind(kStatePrefix, 0) != 0)
            cfg.set(key, value);
    return cfg;
}

std::map<std::string, std::string> CheckpointData::state() const
{
    std::map<std::string, std::string> out;
    for (const auto &[key, value] : parse_key_values(echo))
        if (key.rfind(kStatePrefix, 0) == 0)
            out[key.substr(kStatePrefix.size())] = value;
    return out;
}

void write_checkpoint(const std::filesystem::path &path, const CheckpointData &data)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os)
            throw DataError("cannot open " + tmp.string() + " for writing");
        os.write(kMagic.data(), 4);
        le::put_u32(os, static_cast<uint32_t>(data.tensors.size()));
        for (const auto &[name, t] : data.tensors) {
            le::put_u32(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            le::put_u32(os, static_cast<uint32_t>(t.ndim()));
            for (int64_t e : t.shape())
                le::put_u32(os, static_cast<uint32_t>(e));
            for (Scalar v : t.data())
                le::put_f32(os, static_cast<float>(v));
        }
        le::put_u32(os, static_cast<uint32_t>(data.echo.size()));
        os.write(data.echo.data(), static_cast<std::streamsize>(data.echo.size()));
        if (!os)
            throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open checkpoint " + path.string());
    try {
        std::array<char, 4> magic{};
        if (!is.read(magic.data(), 4) || magic != kMagic)
            throw DataError("bad AGCK magic");
        CheckpointData data;
        const uint32_t count = le::get_u32(is);
        for (uint32_t i = 0; i < count; ++i) {
            std::string name = read_string(is, kMaxName, "tensor name");
            const uint32_t ndim = le::get_u32(is);
            if (ndim == 0 || ndim > 8)
                throw DataError("tensor '" + name + "' has rank " + std::to_string(ndim));
            Shape shape(ndim);
            for (auto &e : shape) {
                e = le::get_u32(is);
                if (e == 0)
                    throw DataError("tensor '" + name + "' has a zero extent");
            }
            std::vector<Scalar> values(static_cast<size_t>(shape_numel(shape)));
            for (auto &v : values)
                v = static_cast<Scalar>(le::get_f32(is));
            data.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
        }
        data.echo = read_string(is, kMaxEcho, "config echo");
        return data;
    } catch (const DataError &e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
}

CheckpointData make_checkpoint(const Model &model, const RunConfig &config, const std::vector<NamedTensor> &extra,
                               const std::map<std::string, std::string> &state)
{
    CheckpointData data;
    for (const auto &t : model.state())
        data.tensors.emplace_back(t.name, t.tensor.clone());
    for (const auto &t : extra)
        data.tensors.emplace_back(t.name, t.tensor.clone());
    RunConfig echo = config;
    model.spec().to_config(echo);
    std::ostringstream os;
    os << echo.dump();
    for (const auto &[k, v] : state)
        os << kStatePrefix << k << " = " << v << '\n';
    data.echo = os.str();
    return data;
}

void save_checkpoint(const Model &model, const std::filesystem::path &path, const RunConfig &config)
{
    write_checkpoint(path, make_checkpoint(model, config));
}

void assign_state(Model &model, const CheckpointData &data)
{
    std::vector<std::string> problems;
    std::vector<std::pair<const Tensor *, Tensor>> copies;
    for (const auto &t : model.state()) {
        const Tensor *src = data.find(t.name);
        if (!src)
            problems.push_back(t.name + ": missing");
        else if (src->shape() != t.tensor.shape())
            problems.push_back(t.name + ": stored " + shape_str(src->shape()) + ", model " + shape_str(t.tensor.shape()));
        else
            copies.emplace_back(src, t.tensor);
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match the model:";
        for (const auto &p : problems)
            msg += "\n  " + p;
        throw DataError(msg);
    }
    for (auto &[src, dst] : copies)
        std::copy(src->data().begin(), src->data().end(), dst.data().begin());
}

Model load_model(const CheckpointData &data)
{
    Model model(ModelSpec::from_config(data.config()));
    if (data.find("ft.weight"))
        model.attach_ft_head();
    assign_state(model, data);
    return model;
}

Model load_checkpoint(const std::filesystem::path &path)
{
    return load_model(read_checkpoint(path));
}

} // namespace agnet::inline AGNET_ABI
