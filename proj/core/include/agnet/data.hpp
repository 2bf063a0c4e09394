#pragma once

#include <agnet/box.hpp>
#include <agnet/tensor.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace agnet::inline AGNET_ABI {

struct Sample {
    Tensor image; // [1, H, W]
    int label = 0;
    std::optional<BoundingBox> bbox;
};

struct IndexEntry {
    std::string path; // relative to the dataset root
    int label = 0;
    std::optional<BoundingBox> bbox;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::string split;
    std::vector<IndexEntry> entries;
};

// ---- synthetic generator ------------------------------------------------

struct SyntheticConfig {
    uint64_t seed = 1;
    int n_per_class = 100;
    int num_plane_classes = 5;
    int height = 64;
    int width = 80;
    int background_ratio = 10; // background images per plane-class image count
    double train_frac = 0.6;
    double val_frac = 0.2;
    double noise_sigma = 0.25;
    int distractors = 0;               // faint glyphs at random orientations in every image
    double distractor_amplitude = 0.5;

    int background_label() const { return num_plane_classes; }
    int total() const { return n_per_class * (num_plane_classes + background_ratio); }
};

/// Canonical glyph orientation (degrees) of a plane class.
double class_orientation(int label);
/// Orientation of a background glyph derived from plane class `near`.
double background_orientation(int near);

/// Image number `index` (0 <= index < cfg.total()); pure in (cfg.seed, index).
/// Indices are grouped by class: plane class c owns [c*n, (c+1)*n), the
/// background owns the tail.
Sample synthesize_sample(const SyntheticConfig &cfg, int index);

struct SyntheticDataset {
    SyntheticConfig config;
    std::map<std::string, DatasetIndex> splits; // train / val / test
};

/// Writes images/<split>/<id>.agt1, train.idx, val.idx, test.idx and manifest.txt.
SyntheticDataset generate_synthetic(const SyntheticConfig &cfg, const std::filesystem::path &root);

/// Stratified split assignment: per class round(train_frac*n) train,
/// round(val_frac*n) validation, the rest test.
std::map<std::string, std::vector<int>> split_indices(const SyntheticConfig &cfg);

// ---- index files --------------------------------------------------------

void write_index(const std::filesystem::path &file, const DatasetIndex &index);
DatasetIndex read_index(const std::filesystem::path &root, const std::string &split);
std::vector<Sample> load_samples(const DatasetIndex &index);

// ---- preprocessing ------------------------------------------------------

/// Per-image zero mean and unit standard deviation (or unit variance scaling
/// when `literal_variance`). A constant image maps to zeros.
Tensor whiten(const Tensor &image, bool literal_variance = false);

struct AugmentConfig {
    int translate_px = 4;
    bool hflip = true;
    double rotate_deg = 25.0;
    double zoom_min = 0.7;
    double zoom_max = 1.3;

    static AugmentConfig none() { return {0, false, 0.0, 1.0, 1.0}; }
};

/// Forward map of image coordinates: p' = [a b; c d] p + [tx ty].
struct AffineTransform {
    double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

    static AffineTransform translation(double dx, double dy);
    /// x -> (width - 1) - x
    static AffineTransform hflip(int width);
    static AffineTransform rotation(double degrees, double cx, double cy);
    static AffineTransform zoom(double factor, double cx, double cy);

    /// Applies `first`, then *this.
    AffineTransform after(const AffineTransform &first) const;
    AffineTransform inverse() const;
    void apply(double x, double y, double &ox, double &oy) const;
};

/// Draws translate -> flip -> rotate -> zoom from the configured ranges.
AffineTransform sample_transform(const AugmentConfig &cfg, int width, int height, std::mt19937_64 &rng);
/// Bilinear resampling with edge replication; the box is mapped through its
/// corners and clipped to the canvas.
Sample apply_transform(const Sample &sample, const AffineTransform &t);
Sample augment(const Sample &sample, const AugmentConfig &cfg, std::mt19937_64 &rng);

// ---- class-balanced sampling -------------------------------------------

/// Per-sample probabilities: 1/n_c for plane classes, P/n_bg for the
/// background (label == num_plane_classes), normalized to sum to 1.
std::vector<double> weighted_sampler_probs(const std::vector<int> &labels, int num_plane_classes);

struct Batch {
    Tensor images; // [B, 1, H, W]
    std::vector<int> labels;
};

class BatchSampler {
public:
    BatchSampler(std::vector<Sample> samples, int num_plane_classes, AugmentConfig augment, bool use_augment, bool literal_variance);

    /// i.i.d. weighted draws, then augmentation and whitening.
    Batch next(int batch_size, std::mt19937_64 &rng);
    /// Draws sample indices only (no image work).
    std::vector<size_t> draw_indices(int count, std::mt19937_64 &rng);

    size_t size() const { return samples_.size(); }
    const std::vector<double> &probabilities() const { return probs_; }

private:
    std::vector<Sample> samples_;
    std::vector<double> probs_;
    std::discrete_distribution<size_t> dist_;
    AugmentConfig augment_;
    bool use_augment_;
    bool literal_variance_;
};

/// Whitened, unaugmented batch of samples[begin, end).
Batch make_eval_batch(const std::vector<Sample> &samples, size_t begin, size_t end, bool literal_variance = false);

/// Fits a one-feature linear discriminant (global mean intensity) on
/// `train` plane-class samples and returns its accuracy on `test` plane-class
/// samples.
double mean_intensity_probe_accuracy(const std::vector<Sample> &train, const std::vector<Sample> &test, int num_plane_classes);

} // namespace agnet::inline AGNET_ABI
