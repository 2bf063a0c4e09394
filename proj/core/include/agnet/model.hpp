#pragma once

#include <agnet/attention.hpp>
#include <agnet/config.hpp>
#include <agnet/ops.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace agnet::inline AGNET_ABI {

enum class Variant { Sononet, AG, AGDeepSupervision, AGFineTune };
enum class Aggregation { Mean, DeepSupervision, FineTune };

std::string to_string(Variant v);
Variant parse_variant(std::string_view name);
std::string to_string(Aggregation a);

/// Architecture hyperparameters.
struct ModelSpec {
    Variant variant = Variant::AG;
    int n_initial = 8;
    int num_classes = 6;
    int input_h = 64;
    int input_w = 80;
    Normalization normalization = Normalization::MinSum;
    bool grid_gating = true;
    bool batchnorm = true;
    uint64_t seed = 1;

    static constexpr int kBlocks = 5;
    static constexpr std::array<int, kBlocks> kConvsPerBlock{3, 3, 3, 2, 2};
    /// Layer ids counting pools; the last convolutions of blocks 3 and 4.
    static constexpr std::array<int, 2> kGatedLayers{11, 14};

    bool has_attention() const { return variant != Variant::Sononet; }
    Aggregation aggregation() const;
    /// [n, 2n, 4n, 8n, 8n]
    std::array<int64_t, kBlocks> block_channels() const;
    void validate() const;

    static ModelSpec from_config(const RunConfig &cfg);
    void to_config(RunConfig &cfg) const;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool decay = false; // receives L2 weight decay
};

struct ConvUnit {
    int layer_id = 0;
    Tensor weight; // [Cout, Cin, 3, 3]
    Tensor bias;   // [Cout]
    Tensor gamma;  // [Cout] (batch norm)
    Tensor beta;
    BatchNormStats stats;
};

struct LinearHead {
    Tensor weight; // [K, D]
    Tensor bias;   // [K]
};

/// One entry of the 17-layer extractor table.
struct LayerInfo {
    int id;
    bool is_pool;
    int block;
    int64_t channels;
};

struct ForwardOutput {
    std::vector<Tensor> scale_logits; // AG: [gate layer 11, gate layer 14, coarsest GAP]; Sononet: one entry
    Tensor logits;                    // aggregated scores fed to cross-entropy (log-probabilities in mean mode)
    Tensor scores;                    // monotone in the class posterior; predictions are its argmax
    std::vector<AttentionMap> attention;
    Tensor coarse_map; // final extractor activation [N, 8n, H/16, W/16]
    Tensor class_map;  // Sononet only: adaptation output [N, K, H/16, W/16]
};

/// Sononet and AG-Sononet. Parameters are allocated and initialized from
/// spec.seed at construction.
class Model {
public:
    explicit Model(ModelSpec spec);

    const ModelSpec &spec() const { return spec_; }

    ForwardOutput forward(const Tensor &images, bool training);
    /// Runs the feature extractor only. `gated` receives the activations of
    /// the gated layers (layer 11, layer 14) when non-null.
    Tensor extract(const Tensor &images, bool training, std::vector<Tensor> *gated = nullptr);

    std::vector<NamedTensor> parameters() const;
    /// Non-trainable state (batch-norm running statistics).
    std::vector<NamedTensor> buffers() const;
    /// parameters() followed by buffers().
    std::vector<NamedTensor> state() const;

    bool has_ft_head() const { return ft_head_.has_value(); }
    /// Adds the 3K -> K fine-tuning layer initialized to exact averaging.
    void attach_ft_head();

    const LinearHead &coarse_head() const;
    const LinearHead &adaptation() const { return adaptation_; }
    const std::vector<std::vector<ConvUnit>> &blocks() const { return blocks_; }
    const std::vector<AttentionGateParams> &gates() const { return gates_; }
    const std::vector<LinearHead> &heads() const { return heads_; }
    const std::optional<LinearHead> &ft_head() const { return ft_head_; }

    std::vector<LayerInfo> layout() const;

private:
    ModelSpec spec_;
    std::vector<std::vector<ConvUnit>> blocks_;
    LinearHead adaptation_;                 // Sononet: 1x1 conv weight stored as [K, C, 1, 1]
    std::vector<AttentionGateParams> gates_; // AG: layer 11, layer 14
    std::vector<LinearHead> heads_;          // AG: per-scale classifiers
    std::optional<LinearHead> ft_head_;
};

/// Combines per-scale logits. Mean and deep-supervision modes average the
/// per-scale softmax outputs and return their log; fine-tune mode applies
/// `ft_head` to the concatenated per-scale probabilities.
Tensor aggregate(const std::vector<Tensor> &scale_logits, Aggregation mode, const LinearHead *ft_head = nullptr);
/// Mean of the per-scale softmax outputs (before the log taken by aggregate()).
Tensor mean_probabilities(const std::vector<Tensor> &scale_logits);

int64_t count_params(const Model &model);
/// Closed-form count from the layer dimension formulas.
int64_t analytic_param_count(const ModelSpec &spec, bool with_ft_head = false);

/// Copies the extractor (weights and running statistics) of a Sononet donor
/// into an AG model. Gates and heads keep their own initialization.
void init_from_sononet(Model &ag_model, const Model &sononet);

} // namespace agnet::inline AGNET_ABI
