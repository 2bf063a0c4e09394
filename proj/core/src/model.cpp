#include <agnet/init.hpp>
#include <agnet/model.hpp>

#include <algorithm>
#include <random>

namespace agnet::inline AGNET_ABI {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::Sononet:
        return "sononet";
    case Variant::AG:
        return "ag";
    case Variant::AGDeepSupervision:
        return "ag_ds";
    case Variant::AGFineTune:
        return "ag_ft";
    }
    return "ag";
}

Variant parse_variant(std::string_view name)
{
    if (name == "sononet")
        return Variant::Sononet;
    if (name == "ag")
        return Variant::AG;
    if (name == "ag_ds")
        return Variant::AGDeepSupervision;
    if (name == "ag_ft")
        return Variant::AGFineTune;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected sononet, ag, ag_ds or ag_ft)");
}

std::string to_string(Aggregation a)
{
    switch (a) {
    case Aggregation::Mean:
        return "mean";
    case Aggregation::DeepSupervision:
        return "ds";
    case Aggregation::FineTune:
        return "ft";
    }
    return "mean";
}

Aggregation ModelSpec::aggregation() const
{
    switch (variant) {
    case Variant::AGDeepSupervision:
        return Aggregation::DeepSupervision;
    case Variant::AGFineTune:
        return Aggregation::FineTune;
    default:
        return Aggregation::Mean;
    }
}

std::array<int64_t, ModelSpec::kBlocks> ModelSpec::block_channels() const
{
    const int64_t n = n_initial;
    return {n, 2 * n, 4 * n, 8 * n, 8 * n};
}

void ModelSpec::validate() const
{
    if (n_initial < 4 || (n_initial & (n_initial - 1)) != 0)
        throw ConfigError("n_initial must be a power of two >= 4, got " + std::to_string(n_initial));
    if (num_classes < 2)
        throw ConfigError("num_classes must be at least 2");
    if (input_h <= 0 || input_w <= 0 || input_h % 16 != 0 || input_w % 16 != 0)
        throw DimensionError("input extents " + std::to_string(input_h) + "x" + std::to_string(input_w) + " must be positive multiples of 16");
}

ModelSpec ModelSpec::from_config(const RunConfig &cfg)
{
    ModelSpec s;
    s.variant = parse_variant(cfg.get("variant"));
    s.n_initial = cfg.get_int("n_initial");
    s.num_classes = cfg.get_int("num_classes");
    s.input_h = cfg.get_int("input_h");
    s.input_w = cfg.get_int("input_w");
    s.normalization = parse_normalization(cfg.get("normalization"));
    const std::string &gating = cfg.get("gating");
    if (gating != "grid" && gating != "vector")
        throw ConfigError("gating must be grid or vector, got '" + gating + "'");
    s.grid_gating = gating == "grid";
    s.batchnorm = cfg.get_bool("batchnorm");
    s.seed = cfg.get_u64("seed");
    const std::string &agg = cfg.get("aggregation");
    if (agg != "auto") {
        if (!s.has_attention())
            throw ConfigError("aggregation '" + agg + "' requires an attention-gated variant");
        if (agg != to_string(s.aggregation()))
            throw ConfigError("aggregation '" + agg + "' does not match variant '" + to_string(s.variant) + "'");
    }
    s.validate();
    return s;
}

void ModelSpec::to_config(RunConfig &cfg) const
{
    cfg.set("variant", to_string(variant));
    cfg.set("n_initial", std::to_string(n_initial));
    cfg.set("num_classes", std::to_string(num_classes));
    cfg.set("input_h", std::to_string(input_h));
    cfg.set("input_w", std::to_string(input_w));
    cfg.set("normalization", to_string(normalization));
    cfg.set("gating", grid_gating ? "grid" : "vector");
    cfg.set("batchnorm", batchnorm ? "true" : "false");
    cfg.set("seed", std::to_string(seed));
}

namespace {

Tensor trainable(Tensor t)
{
    t.set_requires_grad(true);
    return t;
}

LinearHead make_head(int64_t in, int64_t out, std::mt19937_64 &rng)
{
    return LinearHead{trainable(he_normal(Shape{out, in}, rng)), trainable(Tensor(Shape{out}))};
}

} // namespace

Model::Model(ModelSpec spec) : spec_(spec)
{
    spec_.validate();
    std::mt19937_64 rng(spec_.seed);
    const auto channels = spec_.block_channels();
    int64_t in_channels = 1;
    int layer_id = 0;
    for (int b = 0; b < ModelSpec::kBlocks; ++b) {
        std::vector<ConvUnit> block;
        for (int j = 0; j < ModelSpec::kConvsPerBlock[static_cast<size_t>(b)]; ++j) {
            ConvUnit u;
            u.layer_id = ++layer_id;
            const int64_t c = channels[static_cast<size_t>(b)];
            u.weight = trainable(he_normal(Shape{c, in_channels, 3, 3}, rng));
            u.bias = trainable(Tensor(Shape{c}));
            if (spec_.batchnorm) {
                u.gamma = trainable(Tensor(Shape{c}, Scalar(1)));
                u.beta = trainable(Tensor(Shape{c}));
                u.stats = BatchNormStats(c);
            }
            block.push_back(std::move(u));
            in_channels = c;
        }
        blocks_.push_back(std::move(block));
        if (b + 1 < ModelSpec::kBlocks)
            ++layer_id; // max-pool
    }

    const int64_t coarse = channels.back();
    const int64_t K = spec_.num_classes;
    if (!spec_.has_attention()) {
        adaptation_ = LinearHead{trainable(he_normal(Shape{K, coarse, 1, 1}, rng)), trainable(Tensor(Shape{K}))};
        return;
    }
    for (int layer : ModelSpec::kGatedLayers) {
        const int64_t c_s = layer == 11 ? channels[2] : channels[3];
        gates_.push_back(AttentionGateParams::create(c_s, coarse, c_s, rng));
    }
    heads_.push_back(make_head(channels[2], K, rng));
    heads_.push_back(make_head(channels[3], K, rng));
    heads_.push_back(make_head(coarse, K, rng));
}

Tensor Model::extract(const Tensor &images, bool training, std::vector<Tensor> *gated)
{
    if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != spec_.input_h || images.dim(3) != spec_.input_w)
        throw DimensionError("model expects images [N,1," + std::to_string(spec_.input_h) + "," + std::to_string(spec_.input_w) + "], got " +
                             shape_str(images.shape()));
    Tensor x = images;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        for (auto &u : blocks_[b]) {
            x = conv2d(x, u.weight, u.bias, 1, 1);
            if (spec_.batchnorm)
                x = batch_norm2d(x, u.gamma, u.beta, u.stats, training);
            x = relu(x);
            if (gated && std::find(ModelSpec::kGatedLayers.begin(), ModelSpec::kGatedLayers.end(), u.layer_id) != ModelSpec::kGatedLayers.end())
                gated->push_back(x);
        }
        if (b + 1 < blocks_.size())
            x = max_pool2d(x, 2, 2);
    }
    return x;
}

ForwardOutput Model::forward(const Tensor &images, bool training)
{
    ForwardOutput out;
    std::vector<Tensor> gated;
    out.coarse_map = extract(images, training, spec_.has_attention() ? &gated : nullptr);

    if (!spec_.has_attention()) {
        out.class_map = conv2d(out.coarse_map, adaptation_.weight, adaptation_.bias);
        out.logits = global_avg_pool(out.class_map);
        out.scores = out.logits;
        out.scale_logits.push_back(out.logits);
        return out;
    }

    const Tensor pooled = global_avg_pool(out.coarse_map);
    for (size_t s = 0; s < gates_.size(); ++s) {
        const int scale = static_cast<int>(s) + 1;
        Tensor attended;
        if (spec_.grid_gating) {
            GateOutput g = grid_gate_forward(gated[s], out.coarse_map, gates_[s], spec_.normalization, scale);
            attended = g.attended;
            out.attention.push_back(std::move(g.map));
        } else {
            AttentionMap map;
            map.scale = scale;
            map.mode = spec_.normalization;
            map.compatibility = compatibility_gated(gated[s], pooled, gates_[s]);
            map.coefficients = normalize_attention(map.compatibility, spec_.normalization);
            attended = attend_pool(gated[s], map.coefficients);
            out.attention.push_back(std::move(map));
        }
        out.scale_logits.push_back(linear(attended, heads_[s].weight, heads_[s].bias));
    }
    out.scale_logits.push_back(linear(pooled, heads_[2].weight, heads_[2].bias));

    const Aggregation mode = ft_head_ ? Aggregation::FineTune : spec_.aggregation() == Aggregation::FineTune ? Aggregation::Mean : spec_.aggregation();
    if (mode == Aggregation::FineTune) {
        out.logits = aggregate(out.scale_logits, mode, &*ft_head_);
        out.scores = out.logits;
    } else {
        out.scores = mean_probabilities(out.scale_logits);
        out.logits = log(out.scores);
    }
    return out;
}

std::vector<NamedTensor> Model::parameters() const
{
    std::vector<NamedTensor> out;
    for (const auto &block : blocks_)
        for (const auto &u : block) {
            const std::string p = "features.conv" + std::to_string(u.layer_id);
            out.push_back({p + ".weight", u.weight, true});
            out.push_back({p + ".bias", u.bias, false});
            if (spec_.batchnorm) {
                out.push_back({p + ".bn.gamma", u.gamma, false});
                out.push_back({p + ".bn.beta", u.beta, false});
            }
        }
    if (!spec_.has_attention()) {
        out.push_back({"adaptation.weight", adaptation_.weight, true});
        out.push_back({"adaptation.bias", adaptation_.bias, false});
        return out;
    }
    for (size_t s = 0; s < gates_.size(); ++s) {
        const std::string p = "gate" + std::to_string(s + 1);
        const auto &g = gates_[s];
        out.push_back({p + ".wf", g.wf, true});
        out.push_back({p + ".wg", g.wg, true});
        out.push_back({p + ".bg", g.bg, false});
        out.push_back({p + ".psi", g.psi, true});
        out.push_back({p + ".bpsi", g.bpsi, false});
    }
    for (size_t s = 0; s < heads_.size(); ++s) {
        const std::string p = "head" + std::to_string(s + 1);
        out.push_back({p + ".weight", heads_[s].weight, true});
        out.push_back({p + ".bias", heads_[s].bias, false});
    }
    if (ft_head_) {
        out.push_back({"ft.weight", ft_head_->weight, true});
        out.push_back({"ft.bias", ft_head_->bias, false});
    }
    return out;
}

std::vector<NamedTensor> Model::buffers() const
{
    std::vector<NamedTensor> out;
    if (!spec_.batchnorm)
        return out;
    for (const auto &block : blocks_)
        for (const auto &u : block) {
            const std::string p = "features.conv" + std::to_string(u.layer_id);
            out.push_back({p + ".bn.running_mean", u.stats.mean, false});
            out.push_back({p + ".bn.running_var", u.stats.var, false});
        }
    return out;
}

std::vector<NamedTensor> Model::state() const
{
    auto out = parameters();
    auto buf = buffers();
    out.insert(out.end(), buf.begin(), buf.end());
    return out;
}

void Model::attach_ft_head()
{
    if (!spec_.has_attention())
        throw ConfigError("fine-tuning head requires an attention-gated model");
    const int64_t K = spec_.num_classes;
    const auto S = static_cast<int64_t>(heads_.size());
    Tensor w(Shape{K, S * K});
    const Scalar share = Scalar(1) / static_cast<Scalar>(S);
    for (int64_t k = 0; k < K; ++k)
        for (int64_t s = 0; s < S; ++s)
            w[k * S * K + s * K + k] = share;
    ft_head_ = LinearHead{trainable(std::move(w)), trainable(Tensor(Shape{K}))};
}

const LinearHead &Model::coarse_head() const
{
    if (!spec_.has_attention())
        throw ConfigError("Sononet has no coarse linear head; use adaptation()");
    return heads_.back();
}

std::vector<LayerInfo> Model::layout() const
{
    std::vector<LayerInfo> out;
    const auto channels = spec_.block_channels();
    int id = 0;
    for (int b = 0; b < ModelSpec::kBlocks; ++b) {
        for (int j = 0; j < ModelSpec::kConvsPerBlock[static_cast<size_t>(b)]; ++j)
            out.push_back({++id, false, b, channels[static_cast<size_t>(b)]});
        if (b + 1 < ModelSpec::kBlocks)
            out.push_back({++id, true, b, channels[static_cast<size_t>(b)]});
    }
    return out;
}

Tensor aggregate(const std::vector<Tensor> &scale_logits, Aggregation mode, const LinearHead *ft_head)
{
    if (scale_logits.size() < 2)
        throw ConfigError("aggregation needs at least two branches, got " + std::to_string(scale_logits.size()));
    if (mode == Aggregation::FineTune) {
        if (!ft_head)
            throw ConfigError("fine-tune aggregation requested without a fine-tuning head");
        std::vector<Tensor> probs;
        for (const auto &l : scale_logits)
            probs.push_back(softmax(l));
        return linear(concat_features(probs), ft_head->weight, ft_head->bias);
    }
    return log(mean_probabilities(scale_logits));
}

Tensor mean_probabilities(const std::vector<Tensor> &scale_logits)
{
    if (scale_logits.empty())
        throw ConfigError("mean_probabilities: no branches");
    const Scalar share = Scalar(1) / static_cast<Scalar>(scale_logits.size());
    Tensor acc = scale(softmax(scale_logits[0]), share);
    for (size_t s = 1; s < scale_logits.size(); ++s)
        acc = add(acc, scale(softmax(scale_logits[s]), share));
    return acc;
}

int64_t count_params(const Model &model)
{
    int64_t n = 0;
    for (const auto &p : model.parameters())
        n += p.tensor.numel();
    return n;
}

int64_t analytic_param_count(const ModelSpec &spec, bool with_ft_head)
{
    const auto ch = spec.block_channels();
    const int64_t K = spec.num_classes;
    int64_t total = 0;
    int64_t in = 1;
    for (int b = 0; b < ModelSpec::kBlocks; ++b) {
        const int64_t c = ch[static_cast<size_t>(b)];
        for (int j = 0; j < ModelSpec::kConvsPerBlock[static_cast<size_t>(b)]; ++j) {
            total += 9 * in * c + c;        // 3x3 kernel + bias
            total += spec.batchnorm ? 2 * c : 0; // gamma, beta
            in = c;
        }
    }
    if (!spec.has_attention())
        return total + K * in + K; // 1x1 class reduction
    total += gate_param_count(ch[2], ch[4], ch[2]) + gate_param_count(ch[3], ch[4], ch[3]);
    total += (ch[2] + 1) * K + (ch[3] + 1) * K + (ch[4] + 1) * K;
    if (with_ft_head)
        total += 3 * K * K + K;
    return total;
}

void init_from_sononet(Model &ag_model, const Model &sononet)
{
    if (!ag_model.spec().has_attention())
        throw ConfigError("init_from_sononet: target must be an attention-gated model");
    if (sononet.spec().has_attention())
        throw ConfigError("init_from_sononet: donor must be a Sononet");
    std::vector<std::string> problems;
    if (ag_model.spec().n_initial != sononet.spec().n_initial)
        problems.push_back("n_initial " + std::to_string(sononet.spec().n_initial) + " vs " + std::to_string(ag_model.spec().n_initial));
    if (ag_model.spec().batchnorm != sononet.spec().batchnorm)
        problems.push_back("batchnorm setting differs");

    auto donor_state = sononet.state();
    auto target_state = ag_model.state();
    std::vector<std::pair<Tensor, Tensor>> copies;
    for (auto &t : target_state) {
        if (t.name.rfind("features.", 0) != 0)
            continue;
        const auto it = std::find_if(donor_state.begin(), donor_state.end(), [&](const NamedTensor &d) { return d.name == t.name; });
        if (it == donor_state.end())
            problems.push_back(t.name + ": missing in donor");
        else if (it->tensor.shape() != t.tensor.shape())
            problems.push_back(t.name + ": donor " + shape_str(it->tensor.shape()) + " vs " + shape_str(t.tensor.shape()));
        else
            copies.emplace_back(it->tensor, t.tensor);
    }
    if (!problems.empty()) {
        std::string msg = "init_from_sononet: incompatible extractor layout:";
        for (const auto &p : problems)
            msg += "\n  " + p;
        throw DimensionError(msg);
    }
    for (auto &[src, dst] : copies)
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

} // namespace agnet::inline AGNET_ABI
