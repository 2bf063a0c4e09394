#include <agnet/data.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace agnet::inline AGNET_ABI {

Tensor whiten(const Tensor &image, bool literal_variance)
{
    if (image.numel() == 0)
        throw DimensionError("whiten: empty image");
    double mean = 0;
    for (Scalar v : image.data())
        mean += v;
    mean /= static_cast<double>(image.numel());
    double var = 0;
    for (Scalar v : image.data())
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(image.numel());
    const double sd = std::sqrt(var);
    Tensor out(image.shape());
    if (sd < 1e-8)
        return out;
    const double div = literal_variance ? var : sd;
    for (int64_t i = 0; i < image.numel(); ++i)
        out[i] = static_cast<Scalar>((image[i] - mean) / div);
    return out;
}

// ---- affine transforms --------------------------------------------------

AffineTransform AffineTransform::translation(double dx, double dy)
{
    return {1, 0, 0, 1, dx, dy};
}

AffineTransform AffineTransform::hflip(int width)
{
    return {-1, 0, 0, 1, static_cast<double>(width - 1), 0};
}

AffineTransform AffineTransform::rotation(double degrees, double cx, double cy)
{
    // Counter-clockwise on screen (y down).
    const double r = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(r), s = std::sin(r);
    AffineTransform t{c, s, -s, c, 0, 0};
    t.tx = cx - (t.a * cx + t.b * cy);
    t.ty = cy - (t.c * cx + t.d * cy);
    return t;
}

AffineTransform AffineTransform::zoom(double factor, double cx, double cy)
{
    return {factor, 0, 0, factor, cx - factor * cx, cy - factor * cy};
}

AffineTransform AffineTransform::after(const AffineTransform &f) const
{
    return {a * f.a + b * f.c, a * f.b + b * f.d, c * f.a + d * f.c, c * f.b + d * f.d, a * f.tx + b * f.ty + tx,
            c * f.tx + d * f.ty + ty};
}

AffineTransform AffineTransform::inverse() const
{
    const double det = a * d - b * c;
    if (std::abs(det) < 1e-12)
        throw NumericalError("singular affine transform");
    AffineTransform inv{d / det, -b / det, -c / det, a / det, 0, 0};
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
}

void AffineTransform::apply(double x, double y, double &ox, double &oy) const
{
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
}

AffineTransform sample_transform(const AugmentConfig &cfg, int width, int height, std::mt19937_64 &rng)
{
    if (cfg.translate_px < 0 || cfg.rotate_deg < 0 || cfg.zoom_min <= 0 || cfg.zoom_max < cfg.zoom_min)
        throw ConfigError("invalid augmentation ranges");
    std::uniform_int_distribution<int> shift(-cfg.translate_px, cfg.translate_px);
    std::uniform_real_distribution<double> angle(-cfg.rotate_deg, cfg.rotate_deg);
    std::uniform_real_distribution<double> scale(cfg.zoom_min, cfg.zoom_max);
    const int dx = shift(rng);
    const int dy = shift(rng);
    const bool flip = cfg.hflip && std::bernoulli_distribution(0.5)(rng);
    const double deg = cfg.rotate_deg > 0 ? angle(rng) : 0.0;
    const double zoom = cfg.zoom_max > cfg.zoom_min ? scale(rng) : cfg.zoom_min;

    const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    AffineTransform t = AffineTransform::translation(dx, dy);
    if (flip)
        t = AffineTransform::hflip(width).after(t);
    if (deg != 0.0)
        t = AffineTransform::rotation(deg, cx, cy).after(t);
    if (zoom != 1.0)
        t = AffineTransform::zoom(zoom, cx, cy).after(t);
    return t;
}

Sample apply_transform(const Sample &sample, const AffineTransform &t)
{
    const Tensor &img = sample.image;
    if (img.ndim() != 3 || img.dim(0) != 1)
        throw DimensionError("augment: expected a [1,H,W] image, got " + shape_str(img.shape()));
    const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
    const AffineTransform inv = t.inverse();
    Sample out;
    out.label = sample.label;
    out.image = Tensor(img.shape());
    const Scalar *src = img.ptr();
    Scalar *dst = out.image.ptr();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx, sy;
            inv.apply(x, y, sx, sy);
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - x0, fy = sy - y0;
            const double v00 = src[y0 * w + x0], v01 = src[y0 * w + x1];
            const double v10 = src[y1 * w + x0], v11 = src[y1 * w + x1];
            const double top = v00 + (v01 - v00) * fx;
            const double bot = v10 + (v11 - v10) * fx;
            dst[y * w + x] = static_cast<Scalar>(top + (bot - top) * fy);
        }
    if (sample.bbox) {
        const auto &b = *sample.bbox;
        // Pixel i spans [i - 0.5, i + 0.5]; map the box's outer corners.
        const double xs[2] = {b.x0 - 0.5, b.x1 - 0.5};
        const double ys[2] = {b.y0 - 0.5, b.y1 - 0.5};
        double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
        for (double cx : xs)
            for (double cy : ys) {
                double ox, oy;
                t.apply(cx, cy, ox, oy);
                minx = std::min(minx, ox);
                maxx = std::max(maxx, ox);
                miny = std::min(miny, oy);
                maxy = std::max(maxy, oy);
            }
        BoundingBox nb{static_cast<int>(std::lround(minx + 0.5)), static_cast<int>(std::lround(miny + 0.5)),
                       static_cast<int>(std::lround(maxx + 0.5)), static_cast<int>(std::lround(maxy + 0.5))};
        nb.x0 = std::clamp(nb.x0, 0, w);
        nb.x1 = std::clamp(nb.x1, 0, w);
        nb.y0 = std::clamp(nb.y0, 0, h);
        nb.y1 = std::clamp(nb.y1, 0, h);
        if (!nb.empty())
            out.bbox = nb;
    }
    return out;
}

Sample augment(const Sample &sample, const AugmentConfig &cfg, std::mt19937_64 &rng)
{
    const int h = static_cast<int>(sample.image.dim(1)), w = static_cast<int>(sample.image.dim(2));
    return apply_transform(sample, sample_transform(cfg, w, h, rng));
}

// ---- sampling -----------------------------------------------------------

std::vector<double> weighted_sampler_probs(const std::vector<int> &labels, int num_plane_classes)
{
    if (num_plane_classes <= 0)
        throw DataError("sampler: need at least one plane class");
    std::vector<int64_t> counts(static_cast<size_t>(num_plane_classes) + 1, 0);
    for (int l : labels) {
        if (l < 0 || l > num_plane_classes)
            throw DataError("sampler: label " + std::to_string(l) + " outside [0, " + std::to_string(num_plane_classes) + "]");
        ++counts[static_cast<size_t>(l)];
    }
    for (size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0)
            throw DataError("sampler: class " + std::to_string(c) + " has no samples");
    std::vector<double> probs(labels.size());
    double total = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        const double mass = l == num_plane_classes ? static_cast<double>(num_plane_classes) : 1.0;
        probs[i] = mass / static_cast<double>(counts[static_cast<size_t>(l)]);
        total += probs[i];
    }
    for (auto &p : probs)
        p /= total;
    return probs;
}

namespace {

std::vector<int> labels_of(const std::vector<Sample> &samples)
{
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto &s : samples)
        out.push_back(s.label);
    return out;
}

} // namespace

BatchSampler::BatchSampler(std::vector<Sample> samples, int num_plane_classes, AugmentConfig augment, bool use_augment,
                           bool literal_variance)
    : samples_(std::move(samples)), probs_(weighted_sampler_probs(labels_of(samples_), num_plane_classes)),
      dist_(probs_.begin(), probs_.end()), augment_(augment), use_augment_(use_augment), literal_variance_(literal_variance)
{
}

std::vector<size_t> BatchSampler::draw_indices(int count, std::mt19937_64 &rng)
{
    std::vector<size_t> idx(static_cast<size_t>(count));
    for (auto &i : idx)
        i = dist_(rng);
    return idx;
}

Batch BatchSampler::next(int batch_size, std::mt19937_64 &rng)
{
    if (batch_size <= 0)
        throw ConfigError("batch size must be positive");
    const auto idx = draw_indices(batch_size, rng);
    const Shape &img_shape = samples_.front().image.shape();
    const int64_t per = shape_numel(img_shape);
    Batch batch{Tensor({batch_size, 1, img_shape[1], img_shape[2]}), {}};
    batch.labels.reserve(idx.size());
    for (size_t b = 0; b < idx.size(); ++b) {
        const Sample &src = samples_[idx[b]];
        const Tensor img = use_augment_ ? augment(src, augment_, rng).image : src.image;
        const Tensor wh = whiten(img, literal_variance_);
        std::copy(wh.data().begin(), wh.data().end(), batch.images.ptr() + static_cast<int64_t>(b) * per);
        batch.labels.push_back(src.label);
    }
    return batch;
}

Batch make_eval_batch(const std::vector<Sample> &samples, size_t begin, size_t end, bool literal_variance)
{
    if (begin >= end || end > samples.size())
        throw DimensionError("make_eval_batch: bad range");
    const Shape &img_shape = samples[begin].image.shape();
    const int64_t per = shape_numel(img_shape);
    Batch batch{Tensor({static_cast<int64_t>(end - begin), 1, img_shape[1], img_shape[2]}), {}};
    for (size_t i = begin; i < end; ++i) {
        if (samples[i].image.shape() != img_shape)
            throw DimensionError("make_eval_batch: mixed image shapes");
        const Tensor wh = whiten(samples[i].image, literal_variance);
        std::copy(wh.data().begin(), wh.data().end(), batch.images.ptr() + static_cast<int64_t>(i - begin) * per);
        batch.labels.push_back(samples[i].label);
    }
    return batch;
}

} // namespace agnet::inline AGNET_ABI
