#include <agnet/config.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace agnet {

const std::vector<ConfigKey> &config_keys()
{
    static const std::vector<ConfigKey> keys = {
        // model
        {"variant", "ag", "sononet | ag | ag_ds | ag_ft"},
        {"n_initial", "8", "initial filter count (power of two >= 4)"},
        {"num_classes", "6", "classes including background"},
        {"input_h", "64", "input height (multiple of 16)"},
        {"input_w", "80", "input width (multiple of 16)"},
        {"normalization", "minsum", "attention normalization: minsum | softmax | sigmoid"},
        {"aggregation", "auto", "auto | mean | ds | ft (must agree with variant)"},
        {"gating", "grid", "gate signal form: grid | vector"},
        {"batchnorm", "true", "batch normalization after every extractor convolution"},
        {"seed", "1", "RNG seed for initialization, sampling and augmentation"},
        // optimization
        {"epochs", "300", "training epochs (phase 1 for ag_ft)"},
        {"batch", "64", "mini-batch size"},
        {"steps_per_epoch", "0", "batches per epoch; 0 = ceil(train size / batch)"},
        {"lr0", "0.1", "learning rate after warm start"},
        {"warm_lr", "0.01", "warm-start learning rate"},
        {"warm_epochs", "5", "warm-start epochs"},
        {"decay_every", "100", "epochs between learning-rate decays (anchored at epoch 0)"},
        {"decay_factor", "0.1", "learning-rate decay factor"},
        {"momentum", "0.9", "Nesterov momentum"},
        {"weight_decay", "0.0001", "L2 coefficient on weights"},
        {"patience", "20", "ag_ft: epochs without validation macro-F1 gain before phase 2"},
        {"ft_epochs", "50", "ag_ft: phase-2 epochs"},
        {"ft_lr", "0.01", "ag_ft: phase-2 learning rate"},
        {"pretrain_epochs", "50", "Sononet donor epochs for AG variants when no donor is given (0 = none)"},
        {"donor", "", "Sononet checkpoint used to initialize an AG extractor"},
        // data
        {"data_root", "data", "dataset directory"},
        {"out_dir", "runs/default", "output directory"},
        {"n_per_class", "100", "gen-data: images per plane class"},
        {"num_plane_classes", "5", "gen-data: plane classes (background is extra)"},
        {"noise_sigma", "0.25", "gen-data: additive Gaussian noise level"},
        {"distractors", "0", "gen-data: faint glyphs at random orientations per image"},
        {"distractor_amplitude", "0.5", "gen-data: intensity of distractor glyphs"},
        {"augment", "true", "apply training augmentation"},
        {"translate_px", "4", "augmentation: max translation in pixels"},
        {"rotate_deg", "25", "augmentation: max rotation in degrees"},
        {"zoom_min", "0.7", "augmentation: minimum zoom"},
        {"zoom_max", "1.3", "augmentation: maximum zoom"},
        {"hflip", "true", "augmentation: random horizontal flips"},
        {"literal_variance", "false", "whitening divides by the variance instead of the standard deviation"},
        // localization
        {"blur_sigma", "2", "Gaussian blur sigma in input pixels"},
        {"threshold_frac", "0.5", "activation threshold as a fraction of the map maximum"},
        {"loc_maps", "gates", "maps used for boxes: gates (AG-1, AG-2) | all (adds CAM)"},
    };
    return keys;
}

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

bool known_key(const std::string &key)
{
    const auto &keys = config_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey &k) { return k.name == key; });
}

} // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text)
{
    std::vector<std::pair<std::string, std::string>> out;
    size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key = trim(std::string_view(t).substr(0, eq));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        out.emplace_back(std::move(key), trim(std::string_view(t).substr(eq + 1)));
    }
    return out;
}

RunConfig::RunConfig()
{
    for (const auto &k : config_keys())
        values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(std::string_view text)
{
    RunConfig cfg;
    for (auto &[key, value] : parse_key_values(text))
        cfg.set(key, value);
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path &path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

void RunConfig::set(const std::string &key, const std::string &value)
{
    if (!known_key(key))
        throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

const std::string &RunConfig::get(const std::string &key) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string &key) const
{
    const std::string &v = get(key);
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    return out;
}

uint64_t RunConfig::get_u64(const std::string &key) const
{
    const std::string &v = get(key);
    uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

double RunConfig::get_double(const std::string &key) const
{
    const std::string &v = get(key);
    try {
        size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size())
            throw ConfigError("");
        return out;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool RunConfig::get_bool(const std::string &key) const
{
    const std::string &v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::string RunConfig::dump() const
{
    std::ostringstream os;
    for (const auto &k : config_keys())
        os << k.name << " = " << values_.at(k.name) << '\n';
    return os.str();
}

void RunConfig::save(const std::filesystem::path &path) const
{
    std::ofstream os(path);
    if (!os)
        throw DataError("cannot write " + path.string());
    os << dump();
}

} // namespace agnet
