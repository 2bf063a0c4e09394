#include <agnet/data.hpp>
#include <agnet/tensor_io.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace agnet::inline AGNET_ABI {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMargin = 12;        // minimum glyph distance from the canvas edge
constexpr double kGlyphReach = 8.0; // max distance of a glyph pixel from its centre
constexpr double kJitterDeg = 6.0;

struct Segment {
    double x0, y0, x1, y1;
};

double segment_distance(const Segment &s, double px, double py)
{
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

/// Adds a hooked glyph (stem along `theta`, a bar at the stem's head that
/// reaches further to the stem's left) with anti-aliased strokes. The glyph
/// is chiral, so a mirrored glyph never coincides with a rotated one.
/// Returns the tight box of pixels with coverage >= 0.3.
BoundingBox draw_glyph(std::vector<double> &img, int w, int h, double cx, double cy, double theta_deg, double amplitude)
{
    // Image y grows downwards; theta is measured counter-clockwise on screen.
    const double ux = std::cos(theta_deg * kDeg), uy = -std::sin(theta_deg * kDeg);
    const double vx = -uy, vy = ux;
    const double hx = cx + 4.5 * ux, hy = cy + 4.5 * uy;
    const std::array<Segment, 2> strokes{
        Segment{cx - 5.0 * ux, cy - 5.0 * uy, hx, hy},
        Segment{hx - 1.5 * vx, hy - 1.5 * vy, hx + 4.5 * vx, hy + 4.5 * vy},
    };
    constexpr double kHalfWidth = 1.0;
    BoundingBox box{w, h, 0, 0};
    const int xa = std::max(0, static_cast<int>(std::floor(cx - kGlyphReach - 1)));
    const int xb = std::min(w - 1, static_cast<int>(std::ceil(cx + kGlyphReach + 1)));
    const int ya = std::max(0, static_cast<int>(std::floor(cy - kGlyphReach - 1)));
    const int yb = std::min(h - 1, static_cast<int>(std::ceil(cy + kGlyphReach + 1)));
    for (int y = ya; y <= yb; ++y)
        for (int x = xa; x <= xb; ++x) {
            double d = 1e9;
            for (const auto &s : strokes)
                d = std::min(d, segment_distance(s, x, y));
            const double cover = std::clamp(kHalfWidth + 0.5 - d, 0.0, 1.0);
            if (cover <= 0)
                continue;
            img[static_cast<size_t>(y) * w + x] += amplitude * cover;
            if (cover >= 0.3) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x + 1);
                box.y1 = std::max(box.y1, y + 1);
            }
        }
    return box;
}

/// Low-frequency pattern shared by every image of a dataset.
std::vector<double> shared_texture(const SyntheticConfig &cfg)
{
    std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32), 0x7e47u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> period(24.0, 64.0), angle(0.0, std::numbers::pi), phase(0.0, 2 * std::numbers::pi);
    std::vector<double> tex(static_cast<size_t>(cfg.width) * cfg.height, 0.0);
    for (int k = 0; k < 4; ++k) {
        const double p = period(rng), a = angle(rng), ph = phase(rng);
        const double fx = std::cos(a) * 2 * std::numbers::pi / p, fy = std::sin(a) * 2 * std::numbers::pi / p;
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x)
                tex[static_cast<size_t>(y) * cfg.width + x] += 0.25 * std::sin(fx * x + fy * y + ph);
    }
    return tex;
}

void check_config(const SyntheticConfig &cfg)
{
    if (cfg.height <= 0 || cfg.width <= 0 || cfg.height % 16 || cfg.width % 16)
        throw DataError("image extents must be positive multiples of 16, got " + std::to_string(cfg.height) + "x" +
                        std::to_string(cfg.width));
    if (cfg.height < 2 * (kMargin + 8) || cfg.width < 2 * (kMargin + 8))
        throw DataError("image extents too small for the glyph margins");
    if (cfg.n_per_class <= 0 || cfg.num_plane_classes <= 0 || cfg.background_ratio <= 0)
        throw DataError("class counts must be positive");
    if (cfg.train_frac < 0 || cfg.val_frac < 0 || cfg.train_frac + cfg.val_frac > 1)
        throw DataError("invalid split fractions");
    if (cfg.distractors < 0)
        throw DataError("distractor count must be non-negative");
}

} // namespace

double class_orientation(int label)
{
    return std::fmod(90.0 + 72.0 * label, 360.0);
}

double background_orientation(int near)
{
    return std::fmod(class_orientation(near) + 36.0, 360.0);
}

Sample synthesize_sample(const SyntheticConfig &cfg, int index)
{
    check_config(cfg);
    if (index < 0 || index >= cfg.total())
        throw DataError("sample index " + std::to_string(index) + " out of range");
    const int w = cfg.width, h = cfg.height;
    static thread_local std::pair<std::pair<uint64_t, std::pair<int, int>>, std::vector<double>> cache;
    const auto key = std::make_pair(cfg.seed, std::make_pair(w, h));
    if (cache.second.empty() || cache.first != key)
        cache = {key, shared_texture(cfg)};
    std::vector<double> img = cache.second;

    std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32), static_cast<uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };

    // Per-image smooth variation and global brightness.
    const double offset = uniform(-0.5, 0.5);
    for (int k = 0; k < 3; ++k) {
        const double bx = uniform(0, w), by = uniform(0, h), sigma = uniform(6.0, 16.0), amp = uniform(-0.5, 0.5);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double r2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                img[static_cast<size_t>(y) * w + x] += amp * std::exp(-r2 / (2 * sigma * sigma));
            }
    }
    for (auto &v : img)
        v += offset;

    const int planes = cfg.num_plane_classes * cfg.n_per_class;
    const bool is_plane = index < planes;
    const int label = is_plane ? index / cfg.n_per_class : cfg.background_label();
    const double reach = kMargin + kGlyphReach;
    auto centre = [&](double &cx, double &cy) {
        cx = uniform(reach, w - 1 - reach);
        cy = uniform(reach, h - 1 - reach);
    };

    // Faint glyphs at arbitrary orientations; they carry no class information.
    for (int k = 0; k < cfg.distractors; ++k) {
        double cx, cy;
        centre(cx, cy);
        draw_glyph(img, w, h, cx, cy, uniform(0.0, 360.0), cfg.distractor_amplitude);
    }

    Sample s;
    s.label = label;
    const double amplitude = uniform(0.8, 1.2);
    double cx, cy;
    centre(cx, cy);
    if (is_plane) {
        s.bbox = draw_glyph(img, w, h, cx, cy, class_orientation(label) + uniform(-kJitterDeg, kJitterDeg), amplitude);
    } else if ((index - planes) % 2 == 0) {
        const int near = static_cast<int>(u01(rng) * cfg.num_plane_classes) % cfg.num_plane_classes;
        draw_glyph(img, w, h, cx, cy, background_orientation(near) + uniform(-kJitterDeg, kJitterDeg), amplitude);
    }

    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    std::vector<Scalar> values(img.size());
    for (size_t i = 0; i < img.size(); ++i)
        values[i] = static_cast<Scalar>(static_cast<float>(img[i] + noise(rng)));
    s.image = Tensor({1, h, w}, std::move(values));
    return s;
}

std::map<std::string, std::vector<int>> split_indices(const SyntheticConfig &cfg)
{
    check_config(cfg);
    std::map<std::string, std::vector<int>> out{{"train", {}}, {"val", {}}, {"test", {}}};
    auto assign = [&](int first, int count) {
        const int n_train = static_cast<int>(std::lround(cfg.train_frac * count));
        const int n_val = std::min(count - n_train, static_cast<int>(std::lround(cfg.val_frac * count)));
        for (int i = 0; i < count; ++i)
            out[i < n_train ? "train" : i < n_train + n_val ? "val" : "test"].push_back(first + i);
    };
    for (int c = 0; c < cfg.num_plane_classes; ++c)
        assign(c * cfg.n_per_class, cfg.n_per_class);
    assign(cfg.num_plane_classes * cfg.n_per_class, cfg.background_ratio * cfg.n_per_class);
    return out;
}

SyntheticDataset generate_synthetic(const SyntheticConfig &cfg, const std::filesystem::path &root)
{
    check_config(cfg);
    SyntheticDataset ds;
    ds.config = cfg;
    for (const auto &[split, indices] : split_indices(cfg)) {
        const auto dir = root / "images" / split;
        std::filesystem::create_directories(dir);
        DatasetIndex index{root, split, {}};
        for (int i : indices) {
            const Sample s = synthesize_sample(cfg, i);
            std::ostringstream name;
            name << "images/" << split << '/' << std::setw(6) << std::setfill('0') << i << ".agt1";
            write_agt1(root / name.str(), s.image);
            index.entries.push_back({name.str(), s.label, s.bbox});
        }
        write_index(root / (split + ".idx"), index);
        ds.splits[split] = std::move(index);
    }
    std::ofstream manifest(root / "manifest.txt");
    manifest << "generator = agnet-synthetic-glyphs\n"
             << "seed = " << cfg.seed << '\n'
             << "n_per_class = " << cfg.n_per_class << '\n'
             << "num_plane_classes = " << cfg.num_plane_classes << '\n'
             << "background_label = " << cfg.background_label() << '\n'
             << "background_ratio = " << cfg.background_ratio << "  # assumed background prevalence per plane class\n"
             << "height = " << cfg.height << '\n'
             << "width = " << cfg.width << '\n'
             << "distractors = " << cfg.distractors << '\n'
             << "distractor_amplitude = " << cfg.distractor_amplitude << '\n'
             << "noise_sigma = " << cfg.noise_sigma << '\n'
             << "train_frac = " << cfg.train_frac << '\n'
             << "val_frac = " << cfg.val_frac << '\n';
    if (!manifest)
        throw DataError("cannot write manifest in " + root.string());
    return ds;
}

void write_index(const std::filesystem::path &file, const DatasetIndex &index)
{
    std::ofstream os(file);
    if (!os)
        throw DataError("cannot write index " + file.string());
    for (const auto &e : index.entries)
        os << e.path << '\t' << e.label << '\t' << (e.bbox ? to_string(*e.bbox) : "-") << '\n';
}

DatasetIndex read_index(const std::filesystem::path &root, const std::string &split)
{
    const auto file = root / (split + ".idx");
    std::ifstream is(file);
    if (!is)
        throw DataError("cannot open index " + file.string());
    DatasetIndex index{root, split, {}};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto where = file.string() + ":" + std::to_string(lineno);
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw DataError(where + ": expected three tab-separated fields");
        IndexEntry e;
        e.path = line.substr(0, t1);
        try {
            size_t used = 0;
            const std::string lab = line.substr(t1 + 1, t2 - t1 - 1);
            e.label = std::stoi(lab, &used);
            if (used != lab.size() || e.label < 0)
                throw std::invalid_argument(lab);
        } catch (const std::exception &) {
            throw DataError(where + ": bad label");
        }
        const std::string box = line.substr(t2 + 1);
        if (box != "-") {
            BoundingBox b;
            char c1, c2, c3;
            std::istringstream bs(box);
            if (!(bs >> b.x0 >> c1 >> b.y0 >> c2 >> b.x1 >> c3 >> b.y1) || c1 != ',' || c2 != ',' || c3 != ',' || b.empty())
                throw DataError(where + ": bad bounding box '" + box + "'");
            e.bbox = b;
        }
        if (!std::filesystem::exists(root / e.path))
            throw DataError(where + ": missing image " + e.path);
        index.entries.push_back(std::move(e));
    }
    return index;
}

std::vector<Sample> load_samples(const DatasetIndex &index)
{
    std::vector<Sample> out;
    out.reserve(index.entries.size());
    for (const auto &e : index.entries) {
        Tensor img = read_agt1(index.root / e.path);
        if (img.ndim() != 3 || img.dim(0) != 1)
            throw DataError(e.path + ": expected a [1,H,W] image, got " + shape_str(img.shape()));
        if (e.bbox && !e.bbox->within(static_cast<int>(img.dim(2)), static_cast<int>(img.dim(1))))
            throw DataError(e.path + ": bounding box outside the image");
        out.push_back({std::move(img), e.label, e.bbox});
    }
    return out;
}

double mean_intensity_probe_accuracy(const std::vector<Sample> &train, const std::vector<Sample> &test, int num_plane_classes)
{
    auto mean_of = [](const Sample &s) {
        double acc = 0;
        for (Scalar v : s.image.data())
            acc += v;
        return acc / static_cast<double>(s.image.numel());
    };
    std::vector<double> sum(static_cast<size_t>(num_plane_classes), 0.0);
    std::vector<int> count(static_cast<size_t>(num_plane_classes), 0);
    for (const auto &s : train)
        if (s.label < num_plane_classes) {
            sum[static_cast<size_t>(s.label)] += mean_of(s);
            ++count[static_cast<size_t>(s.label)];
        }
    for (int c = 0; c < num_plane_classes; ++c) {
        if (count[static_cast<size_t>(c)] == 0)
            throw DataError("probe: class " + std::to_string(c) + " has no training samples");
        sum[static_cast<size_t>(c)] /= count[static_cast<size_t>(c)];
    }
    // With a shared variance and equal priors the linear discriminant reduces
    // to the nearest class mean.
    int correct = 0, total = 0;
    for (const auto &s : test) {
        if (s.label >= num_plane_classes)
            continue;
        const double m = mean_of(s);
        int best = 0;
        for (int c = 1; c < num_plane_classes; ++c)
            if (std::abs(m - sum[static_cast<size_t>(c)]) < std::abs(m - sum[static_cast<size_t>(best)]))
                best = c;
        correct += best == s.label;
        ++total;
    }
    if (total == 0)
        throw DataError("probe: no plane-class test samples");
    return static_cast<double>(correct) / total;
}

} // namespace agnet::inline AGNET_ABI
