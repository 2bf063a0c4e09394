#pragma once

#include <agnet/tensor.hpp>

#include <span>
#include <vector>

namespace agnet::inline AGNET_ABI {

/// Running per-channel statistics of a batch-norm layer.
struct BatchNormStats {
    Tensor mean;
    Tensor var;

    BatchNormStats() = default;
    explicit BatchNormStats(int64_t channels) : mean(Shape{channels}, Scalar(0)), var(Shape{channels}, Scalar(1)) {}
};

inline constexpr Scalar kBatchNormEps = Scalar(1e-5);
inline constexpr Scalar kBatchNormMomentum = Scalar(0.1);

// Layers. 4-D tensors are [N, C, H, W].

/// `bias` may be undefined for a bias-free convolution.
Tensor conv2d(const Tensor &input, const Tensor &weight, const Tensor &bias, int stride = 1, int padding = 0);
/// Ties route the gradient to the first maximum in scan order.
Tensor max_pool2d(const Tensor &input, int kernel = 2, int stride = 2);
Tensor batch_norm2d(const Tensor &input, const Tensor &gamma, const Tensor &beta, BatchNormStats &stats, bool training,
                    Scalar momentum = kBatchNormMomentum, Scalar eps = kBatchNormEps);
/// input [N, Din], weight [Dout, Din], bias [Dout] (may be undefined).
Tensor linear(const Tensor &input, const Tensor &weight, const Tensor &bias);
/// Half-pixel (align_corners = false) bilinear resize to a larger or equal grid.
Tensor bilinear_upsample2d(const Tensor &input, int64_t out_h, int64_t out_w);
Tensor global_avg_pool(const Tensor &input);

// Elementwise and reductions.

Tensor relu(const Tensor &x);
Tensor sigmoid(const Tensor &x);
/// Natural log of max(x, floor); the gradient is zero where the floor is active.
Tensor log(const Tensor &x, Scalar floor = Scalar(1e-30));
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, Scalar s);
/// x [N, C, H, W] + v [N, C] broadcast over the spatial axes.
Tensor add_channel_broadcast(const Tensor &x, const Tensor &v);
Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);
Tensor reshape(const Tensor &x, Shape shape);
/// Concatenates 2-D tensors [N, Di] along the feature axis.
Tensor concat_features(const std::vector<Tensor> &parts);

/// Softmax over the last axis, computed with max subtraction.
Tensor softmax(const Tensor &x);
Tensor log_softmax(const Tensor &x);

/// Weighted mean of -log softmax(logits)[label]. Empty `class_weights` means
/// unit weights.
Tensor weighted_cross_entropy(const Tensor &logits, std::span<const int> labels, std::span<const Scalar> class_weights = {});

} // namespace agnet::inline AGNET_ABI
