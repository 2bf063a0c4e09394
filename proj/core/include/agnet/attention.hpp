#pragma once

#include <agnet/tensor.hpp>

#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace agnet::inline AGNET_ABI {

/// How compatibility scores become attention coefficients.
enum class Normalization {
    MinSum,  // shift so the minimum is 0, divide by the sum
    Softmax, // spatial softmax
    Sigmoid, // elementwise logistic, no sum normalization
};

std::string to_string(Normalization mode);
Normalization parse_normalization(std::string_view name);

/// Parameters of one gating unit. W_f, W_g and psi are stored as 1x1
/// convolution kernels so the same tensors serve both the vector and the
/// grid form of the gate signal.
struct AttentionGateParams {
    Tensor wf;   // [C_int, C_s, 1, 1], no bias
    Tensor wg;   // [C_int, C_g, 1, 1]
    Tensor bg;   // [C_int]
    Tensor psi;  // [1, C_int, 1, 1]
    Tensor bpsi; // [1]

    /// He-normal weights, zero biases.
    static AttentionGateParams create(int64_t c_s, int64_t c_g, int64_t c_int, std::mt19937_64 &rng);

    int64_t c_s() const { return wf.dim(1); }
    int64_t c_g() const { return wg.dim(1); }
    int64_t c_int() const { return wf.dim(0); }
    std::vector<Tensor *> tensors();
    int64_t count() const;
};

/// C_int*C_s + C_int*C_g + C_int + C_int + 1.
constexpr int64_t gate_param_count(int64_t c_s, int64_t c_g, int64_t c_int)
{
    return c_int * c_s + c_int * c_g + c_int + c_int + 1;
}

struct AttentionMap {
    int scale = 0;
    Tensor compatibility; // [N,1,H,W]
    Tensor coefficients;  // [N,1,H,W]
    Normalization mode = Normalization::MinSum;
};

/// Additive score c_i = <psi, f_i + W_g g>. features [N,C,H,W], g [N,C_g],
/// psi [C]; `wg` ([C, C_g]) is required when C_g != C.
Tensor compatibility_additive(const Tensor &features, const Tensor &g, const Tensor &psi, const Tensor &wg = {});

/// Gated score c_i = psi . relu(W_f f_i + W_g g + b_g) + b_psi.
/// `g` is either a vector [N,C_g] or a map [N,C_g,H,W] at the features' resolution.
Tensor compatibility_gated(const Tensor &features, const Tensor &g, const AttentionGateParams &params);

/// Per-sample spatial normalization of scores [N,1,H,W]. A constant map under
/// MinSum falls back to uniform coefficients.
Tensor normalize_attention(const Tensor &scores, Normalization mode);

/// g^s[n,c] = sum_i alpha[n,i] * features[n,c,i].
Tensor attend_pool(const Tensor &features, const Tensor &alpha);

struct GateOutput {
    Tensor attended; // [N, C_s]
    AttentionMap map;
};

/// Grid attention: W_g is applied on the coarse grid, the result is bilinearly
/// upsampled to the features' resolution and gated as in compatibility_gated.
GateOutput grid_gate_forward(const Tensor &features, const Tensor &g_grid, const AttentionGateParams &params,
                             Normalization mode = Normalization::MinSum, int scale = 0);

} // namespace agnet::inline AGNET_ABI
