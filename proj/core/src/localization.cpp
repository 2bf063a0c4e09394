#include <agnet/localization.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace agnet::inline AGNET_ABI {

LocalizationOptions LocalizationOptions::from_config(const RunConfig &cfg)
{
    LocalizationOptions o;
    o.blur_sigma = cfg.get_double("blur_sigma");
    o.threshold_frac = cfg.get_double("threshold_frac");
    const std::string maps = cfg.get("loc_maps");
    if (maps != "gates" && maps != "all")
        throw ConfigError("loc_maps must be 'gates' or 'all', got '" + maps + "'");
    o.include_cam = maps == "all";
    if (o.blur_sigma < 0 || !(o.threshold_frac > 0) || o.threshold_frac > 1)
        throw ConfigError("blur_sigma must be >= 0 and threshold_frac in (0, 1]");
    return o;
}

Tensor cam(const Tensor &coarse_map, const Tensor &head_weights, int k, bool clamp)
{
    if (coarse_map.ndim() != 3 || head_weights.ndim() != 2 || head_weights.dim(1) != coarse_map.dim(0))
        throw DimensionError("cam expects map [C,h,w] and weights [K,C], got " + shape_str(coarse_map.shape()) + " and " +
                             shape_str(head_weights.shape()));
    if (k < 0 || k >= head_weights.dim(0))
        throw DimensionError("cam: class " + std::to_string(k) + " outside [0, " + std::to_string(head_weights.dim(0)) + ")");
    const int64_t C = coarse_map.dim(0), hw = coarse_map.dim(1) * coarse_map.dim(2);
    Tensor out({coarse_map.dim(1), coarse_map.dim(2)});
    for (int64_t c = 0; c < C; ++c) {
        const Scalar w = head_weights[k * C + c];
        for (int64_t i = 0; i < hw; ++i)
            out[i] += w * coarse_map[c * hw + i];
    }
    if (clamp)
        for (auto &v : out.data())
            v = std::max(v, Scalar(0));
    return out;
}

namespace {

Tensor upsample_map(const Tensor &map, int height, int width)
{
    if (map.ndim() != 2)
        throw DimensionError("expected a [h,w] map, got " + shape_str(map.shape()));
    NoGradGuard no_grad;
    const Tensor up = bilinear_upsample2d(reshape(map, {1, 1, map.dim(0), map.dim(1)}), height, width);
    return reshape(up, {height, width});
}

Scalar max_of(const Tensor &t)
{
    return *std::max_element(t.data().begin(), t.data().end());
}

} // namespace

Tensor combine_ag_all(const std::vector<Tensor> &maps, int height, int width)
{
    if (maps.empty())
        throw DimensionError("combine_ag_all needs at least one map");
    Tensor out({height, width});
    for (const auto &m : maps) {
        const Tensor up = upsample_map(m, height, width);
        const Scalar mx = max_of(up);
        if (!(mx > 0))
            continue;
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] += up[i] / mx;
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(maps.size());
    for (auto &v : out.data())
        v = std::clamp(v * inv, Scalar(0), Scalar(1));
    return out;
}

Tensor gaussian_blur(const Tensor &map, double sigma)
{
    if (map.ndim() != 2)
        throw DimensionError("gaussian_blur expects [H,W], got " + shape_str(map.shape()));
    if (sigma <= 0)
        return map.clone();
    const int64_t H = map.dim(0), W = map.dim(1);
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double ks = 0;
    for (int i = -r; i <= r; ++i)
        ks += k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto &v : k)
        v /= ks;
    std::vector<double> tmp(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i)
                acc += k[static_cast<size_t>(i + r)] * map[y * W + std::clamp<int64_t>(x + i, 0, W - 1)];
            tmp[static_cast<size_t>(y * W + x)] = acc;
        }
    Tensor out({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i)
                acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(std::clamp<int64_t>(y + i, 0, H - 1) * W + x)];
            out[y * W + x] = static_cast<Scalar>(acc);
        }
    return out;
}

std::vector<Component> connected_components(const Tensor &map, double threshold)
{
    if (map.ndim() != 2)
        throw DimensionError("connected_components expects [H,W], got " + shape_str(map.shape()));
    const int H = static_cast<int>(map.dim(0)), W = static_cast<int>(map.dim(1));
    const double mx = max_of(map);
    std::vector<int> label(static_cast<size_t>(H * W), -1);
    std::vector<Component> out;
    std::vector<int> stack;
    for (int start = 0; start < H * W; ++start) {
        if (label[static_cast<size_t>(start)] >= 0 || map[start] < threshold)
            continue;
        Component c;
        c.box = {W, H, 0, 0};
        const int id = static_cast<int>(out.size());
        label[static_cast<size_t>(start)] = id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            c.pixels.push_back(p);
            const int py = p / W, px = p % W;
            c.activation += mx > 0 ? map[p] / mx : 0.0;
            c.box.x0 = std::min(c.box.x0, px);
            c.box.y0 = std::min(c.box.y0, py);
            c.box.x1 = std::max(c.box.x1, px + 1);
            c.box.y1 = std::max(c.box.y1, py + 1);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = py + dy, nx = px + dx;
                    if ((dy == 0 && dx == 0) || ny < 0 || ny >= H || nx < 0 || nx >= W)
                        continue;
                    const int q = ny * W + nx;
                    if (label[static_cast<size_t>(q)] < 0 && map[q] >= threshold) {
                        label[static_cast<size_t>(q)] = id;
                        stack.push_back(q);
                    }
                }
        }
        std::sort(c.pixels.begin(), c.pixels.end());
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

bool overlaps(const Component &a, const Component &b)
{
    if (a.box.x1 <= b.box.x0 || b.box.x1 <= a.box.x0 || a.box.y1 <= b.box.y0 || b.box.y1 <= a.box.y0)
        return false;
    // Both pixel lists are sorted.
    auto i = a.pixels.begin();
    auto j = b.pixels.begin();
    while (i != a.pixels.end() && j != b.pixels.end()) {
        if (*i == *j)
            return true;
        if (*i < *j)
            ++i;
        else
            ++j;
    }
    return false;
}

struct Search {
    const std::vector<std::vector<Component>> &comps;
    std::vector<size_t> current;
    std::vector<size_t> best;
    double best_score = -1;

    void run(size_t level, double score)
    {
        if (level == comps.size()) {
            if (score > best_score) {
                best_score = score;
                best = current;
            }
            return;
        }
        for (size_t k = 0; k < comps[level].size(); ++k) {
            const Component &c = comps[level][k];
            bool ok = true;
            for (size_t l = 0; l < level && ok; ++l)
                ok = overlaps(comps[l][current[l]], c);
            if (!ok)
                continue;
            current.push_back(k);
            run(level + 1, score + c.activation);
            current.pop_back();
        }
    }
};

} // namespace

std::optional<BoundingBox> extract_bbox(const std::vector<Tensor> &maps, int height, int width, const LocalizationOptions &opts)
{
    if (maps.empty())
        return std::nullopt;
    NoGradGuard no_grad;
    std::vector<std::vector<Component>> comps;
    for (const auto &m : maps) {
        const Tensor up = m.ndim() == 2 && m.dim(0) == height && m.dim(1) == width ? m : upsample_map(m, height, width);
        const Tensor blurred = gaussian_blur(up, opts.blur_sigma);
        const double mx = max_of(blurred);
        if (!(mx > 0))
            return std::nullopt;
        comps.push_back(connected_components(blurred, opts.threshold_frac * mx));
    }
    Search search{comps, {}, {}, -1};
    search.run(0, 0.0);
    if (search.best.empty())
        return std::nullopt;
    BoundingBox box{width, height, 0, 0};
    for (size_t l = 0; l < comps.size(); ++l) {
        const auto &b = comps[l][search.best[l]].box;
        box.x0 = std::min(box.x0, b.x0);
        box.y0 = std::min(box.y0, b.y0);
        box.x1 = std::max(box.x1, b.x1);
        box.y1 = std::max(box.y1, b.y1);
    }
    return box;
}

std::vector<ClassLocalization> localization_metrics(std::vector<LocalizationResult> &results)
{
    std::map<int, std::vector<LocalizationResult *>> by_class;
    for (auto &r : results)
        by_class[r.label].push_back(&r);
    std::vector<ClassLocalization> rows;
    for (auto &[label, group] : by_class) {
        ClassLocalization row;
        row.label = label;
        row.count = static_cast<int>(group.size());
        double sum = 0;
        for (auto *r : group) {
            sum += r->iou;
            row.max_iou = std::max(row.max_iou, r->iou);
        }
        row.mean_iou = sum / row.count;
        double var = 0;
        for (auto *r : group)
            var += (r->iou - row.mean_iou) * (r->iou - row.mean_iou);
        row.std_iou = std::sqrt(var / row.count);
        int cor = 0, rel = 0;
        for (auto *r : group) {
            r->correct = r->iou > 0.5;
            r->relatively_correct = r->iou > 0.5 * row.max_iou;
            cor += r->correct;
            rel += r->relatively_correct;
        }
        row.correctness = static_cast<double>(cor) / row.count;
        row.relative_correctness = static_cast<double>(rel) / row.count;
        rows.push_back(row);
    }
    return rows;
}

std::string format_localization(const std::vector<ClassLocalization> &rows, const std::vector<std::string> &class_names)
{
    std::ostringstream os;
    os << std::left << std::setw(12) << "class" << std::right << std::setw(18) << "IoU mean (std)" << std::setw(10) << "Cor. (%)"
       << std::setw(10) << "Rel. (%)" << '\n';
    os << std::fixed;
    for (const auto &r : rows) {
        const auto k = static_cast<size_t>(r.label);
        std::ostringstream iou;
        iou << std::fixed << std::setprecision(3) << r.mean_iou << " (" << r.std_iou << ")";
        os << std::left << std::setw(12) << (k < class_names.size() ? class_names[k] : "class" + std::to_string(r.label)) << std::right
           << std::setw(18) << iou.str() << std::setprecision(1) << std::setw(10) << 100 * r.correctness << std::setw(10)
           << 100 * r.relative_correctness << '\n';
    }
    return os.str();
}

std::vector<SampleMaps> compute_maps(Model &model, const std::vector<Sample> &samples, int batch, bool literal_variance)
{
    NoGradGuard no_grad;
    std::vector<SampleMaps> out;
    out.reserve(samples.size());
    for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(batch)) {
        const size_t end = std::min(samples.size(), begin + static_cast<size_t>(batch));
        const Batch b = make_eval_batch(samples, begin, end, literal_variance);
        const ForwardOutput f = model.forward(b.images, false);
        const int64_t K = f.scores.dim(1);
        for (int64_t n = 0; n < static_cast<int64_t>(end - begin); ++n) {
            SampleMaps sm;
            const Scalar *row = f.scores.ptr() + n * K;
            sm.predicted = static_cast<int>(std::max_element(row, row + K) - row);
            for (const auto &l : f.scale_logits) {
                const Tensor p = softmax(l);
                sm.probabilities.emplace_back(Shape{K}, std::vector<Scalar>(p.ptr() + n * K, p.ptr() + (n + 1) * K));
            }
            for (const auto &a : f.attention) {
                const int64_t h = a.coefficients.dim(2), w = a.coefficients.dim(3);
                sm.gates.emplace_back(Shape{h, w}, std::vector<Scalar>(a.coefficients.ptr() + n * h * w, a.coefficients.ptr() + (n + 1) * h * w));
            }
            if (model.spec().has_attention()) {
                const Tensor &cm = f.coarse_map;
                const int64_t C = cm.dim(1), hw = cm.dim(2) * cm.dim(3);
                const Tensor one({C, cm.dim(2), cm.dim(3)}, std::vector<Scalar>(cm.ptr() + n * C * hw, cm.ptr() + (n + 1) * C * hw));
                sm.cam = cam(one, model.coarse_head().weight, sm.predicted);
            } else {
                // Sononet's class map is already a per-class activation map.
                const Tensor &cm = f.class_map;
                const int64_t hw = cm.dim(2) * cm.dim(3);
                const Scalar *p = cm.ptr() + (n * K + sm.predicted) * hw;
                sm.cam = Tensor({cm.dim(2), cm.dim(3)});
                for (int64_t i = 0; i < hw; ++i)
                    sm.cam[i] = std::max(p[i], Scalar(0));
            }
            out.push_back(std::move(sm));
        }
    }
    return out;
}

std::vector<Tensor> localization_maps(const SampleMaps &maps, const LocalizationOptions &opts)
{
    if (maps.gates.empty())
        return {maps.cam};
    std::vector<Tensor> out = maps.gates;
    if (opts.include_cam)
        out.push_back(maps.cam);
    return out;
}

std::vector<LocalizationResult> localize(Model &model, const std::vector<Sample> &samples, const LocalizationOptions &opts,
                                         bool literal_variance)
{
    std::vector<Sample> boxed;
    for (const auto &s : samples)
        if (s.bbox)
            boxed.push_back(s);
    if (boxed.empty())
        throw DataError("no samples with ground-truth boxes to localize");
    const int H = model.spec().input_h, W = model.spec().input_w;
    const auto maps = compute_maps(model, boxed, 32, literal_variance);
    std::vector<LocalizationResult> out;
    for (size_t i = 0; i < boxed.size(); ++i) {
        LocalizationResult r;
        r.label = boxed[i].label;
        r.truth = *boxed[i].bbox;
        r.predicted = extract_bbox(localization_maps(maps[i], opts), H, W, opts);
        r.iou = r.predicted ? iou(*r.predicted, r.truth) : 0.0;
        out.push_back(r);
    }
    localization_metrics(out);
    return out;
}

} // namespace agnet::inline AGNET_ABI
