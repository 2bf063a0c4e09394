#pragma once

#include <agnet/box.hpp>
#include <agnet/data.hpp>
#include <agnet/model.hpp>

#include <optional>
#include <string>
#include <vector>

namespace agnet::inline AGNET_ABI {

struct LocalizationOptions {
    double blur_sigma = 2.0;
    double threshold_frac = 0.5;
    bool include_cam = false; // AG models: add the coarsest-scale CAM to the gate maps

    static LocalizationOptions from_config(const RunConfig &cfg);
};

/// sum_c w[k,c] * map[c], negatives clamped to 0 when `clamp`.
/// coarse_map [C,h,w], head_weights [K,C].
Tensor cam(const Tensor &coarse_map, const Tensor &head_weights, int k, bool clamp = true);

/// Upsamples every map [h,w] to [height,width], divides each by its own
/// maximum (an all-zero map stays zero) and averages them.
Tensor combine_ag_all(const std::vector<Tensor> &maps, int height, int width);

/// Separable Gaussian blur of a [H,W] map with edge replication.
Tensor gaussian_blur(const Tensor &map, double sigma);

struct Component {
    std::vector<int> pixels; // flat indices y*W + x
    double activation = 0;   // sum of map/max over the component
    BoundingBox box;
};

/// 8-connected components of pixels with value >= threshold, in raster order
/// of their first pixel.
std::vector<Component> connected_components(const Tensor &map, double threshold);

/// Blur, threshold and label each map at input resolution, pick one
/// component per map such that all chosen components overlap pairwise,
/// maximizing summed activation, and return the tight box of their union.
std::optional<BoundingBox> extract_bbox(const std::vector<Tensor> &maps, int height, int width, const LocalizationOptions &opts = {});

struct LocalizationResult {
    int label = 0;
    std::optional<BoundingBox> predicted;
    BoundingBox truth;
    double iou = 0;
    bool correct = false;            // iou > 0.5
    bool relatively_correct = false; // iou > 0.5 * max iou of the class
};

struct ClassLocalization {
    int label = 0;
    int count = 0;
    double mean_iou = 0;
    double std_iou = 0;
    double max_iou = 0;
    double correctness = 0;
    double relative_correctness = 0;
};

/// Fills the correctness flags of `results` and returns one row per class
/// present, ordered by label.
std::vector<ClassLocalization> localization_metrics(std::vector<LocalizationResult> &results);
std::string format_localization(const std::vector<ClassLocalization> &rows, const std::vector<std::string> &class_names = {});

/// Per-sample maps at their native resolution, each [h,w].
struct SampleMaps {
    int predicted = 0;
    std::vector<Tensor> probabilities; // per scale, [K]
    std::vector<Tensor> gates;         // AG-1, AG-2 coefficients (empty for Sononet)
    Tensor cam;                        // coarsest scale, predicted class
};

/// Forward pass in eval mode without gradient recording.
std::vector<SampleMaps> compute_maps(Model &model, const std::vector<Sample> &samples, int batch = 32, bool literal_variance = false);

/// The maps extract_bbox consumes for one sample.
std::vector<Tensor> localization_maps(const SampleMaps &maps, const LocalizationOptions &opts);

/// Runs the box pipeline on every sample carrying a ground-truth box.
std::vector<LocalizationResult> localize(Model &model, const std::vector<Sample> &samples, const LocalizationOptions &opts = {},
                                         bool literal_variance = false);

} // namespace agnet::inline AGNET_ABI
