#include <agnet/attention.hpp>
#include <agnet/init.hpp>
#include <agnet/ops.hpp>

#include <algorithm>

namespace agnet::inline AGNET_ABI {

std::string to_string(Normalization mode)
{
    switch (mode) {
    case Normalization::MinSum:
        return "minsum";
    case Normalization::Softmax:
        return "softmax";
    case Normalization::Sigmoid:
        return "sigmoid";
    }
    return "minsum";
}

Normalization parse_normalization(std::string_view name)
{
    if (name == "minsum")
        return Normalization::MinSum;
    if (name == "softmax")
        return Normalization::Softmax;
    if (name == "sigmoid")
        return Normalization::Sigmoid;
    throw ConfigError("unknown normalization '" + std::string(name) + "' (expected minsum, softmax or sigmoid)");
}

AttentionGateParams AttentionGateParams::create(int64_t c_s, int64_t c_g, int64_t c_int, std::mt19937_64 &rng)
{
    AttentionGateParams p;
    p.wf = he_normal(Shape{c_int, c_s, 1, 1}, rng);
    p.wg = he_normal(Shape{c_int, c_g, 1, 1}, rng);
    p.bg = Tensor(Shape{c_int});
    p.psi = he_normal(Shape{1, c_int, 1, 1}, rng);
    p.bpsi = Tensor(Shape{1});
    for (Tensor *t : p.tensors())
        t->set_requires_grad(true);
    return p;
}

std::vector<Tensor *> AttentionGateParams::tensors()
{
    return {&wf, &wg, &bg, &psi, &bpsi};
}

int64_t AttentionGateParams::count() const
{
    return wf.numel() + wg.numel() + bg.numel() + psi.numel() + bpsi.numel();
}

Tensor compatibility_additive(const Tensor &features, const Tensor &g, const Tensor &psi, const Tensor &wg)
{
    if (features.ndim() != 4 || g.ndim() != 2 || g.dim(0) != features.dim(0))
        throw DimensionError("compatibility_additive: features [N,C,H,W] and g [N,C_g] required, got " + shape_str(features.shape()) + " and " +
                             shape_str(g.shape()));
    const int64_t C = features.dim(1);
    if (psi.numel() != C)
        throw DimensionError("compatibility_additive: psi must have C=" + std::to_string(C) + " entries");
    Tensor matched = g;
    if (wg.defined()) {
        if (wg.ndim() != 2 || wg.dim(0) != C || wg.dim(1) != g.dim(1))
            throw DimensionError("compatibility_additive: W_g must be [" + std::to_string(C) + "," + std::to_string(g.dim(1)) + "], got " +
                                 shape_str(wg.shape()));
        matched = linear(g, wg, Tensor{});
    } else if (g.dim(1) != C) {
        throw DimensionError("compatibility_additive: g has " + std::to_string(g.dim(1)) + " channels but features have " + std::to_string(C) +
                             "; W_g is required");
    }
    return conv2d(add_channel_broadcast(features, matched), reshape(psi, Shape{1, C, 1, 1}), Tensor{});
}

namespace {

void check_gate_shapes(const Tensor &features, const AttentionGateParams &p)
{
    if (features.ndim() != 4)
        throw DimensionError("attention gate expects features [N,C,H,W], got " + shape_str(features.shape()));
    if (features.dim(1) != p.c_s())
        throw DimensionError("attention gate: features have " + std::to_string(features.dim(1)) + " channels, W_f expects " +
                             std::to_string(p.c_s()));
}

Tensor scores_from_terms(const Tensor &summed, const AttentionGateParams &p)
{
    return conv2d(relu(summed), p.psi, p.bpsi);
}

} // namespace

Tensor compatibility_gated(const Tensor &features, const Tensor &g, const AttentionGateParams &params)
{
    check_gate_shapes(features, params);
    const Tensor local = conv2d(features, params.wf, Tensor{});
    if (g.ndim() == 2) {
        if (g.dim(0) != features.dim(0) || g.dim(1) != params.c_g())
            throw DimensionError("compatibility_gated: g must be [N," + std::to_string(params.c_g()) + "], got " + shape_str(g.shape()));
        const Tensor global = linear(g, reshape(params.wg, Shape{params.c_int(), params.c_g()}), params.bg);
        return scores_from_terms(add_channel_broadcast(local, global), params);
    }
    if (g.ndim() != 4 || g.dim(0) != features.dim(0) || g.dim(1) != params.c_g() || g.dim(2) != features.dim(2) || g.dim(3) != features.dim(3))
        throw DimensionError("compatibility_gated: gridded g must be [N," + std::to_string(params.c_g()) + ",H,W] at the features' resolution, got " +
                             shape_str(g.shape()));
    return scores_from_terms(add(local, conv2d(g, params.wg, params.bg)), params);
}

Tensor normalize_attention(const Tensor &scores, Normalization mode)
{
    if (scores.ndim() != 4 || scores.dim(1) != 1)
        throw DimensionError("normalize_attention expects [N,1,H,W], got " + shape_str(scores.shape()));
    const int64_t N = scores.dim(0), P = scores.dim(2) * scores.dim(3);
    if (mode == Normalization::Sigmoid)
        return sigmoid(scores);
    if (mode == Normalization::Softmax)
        return reshape(softmax(reshape(scores, Shape{N, P})), scores.shape());

    Tensor out(scores.shape());
    std::vector<int64_t> argmin(static_cast<size_t>(N));
    std::vector<Scalar> total(static_cast<size_t>(N));
    for (int64_t n = 0; n < N; ++n) {
        const Scalar *c = scores.ptr() + n * P;
        Scalar *a = out.ptr() + n * P;
        const int64_t j = std::min_element(c, c + P) - c;
        const Scalar lo = c[j];
        Scalar s = 0;
        for (int64_t i = 0; i < P; ++i)
            s += c[i] - lo;
        argmin[static_cast<size_t>(n)] = j;
        total[static_cast<size_t>(n)] = s;
        if (s > 0) {
            for (int64_t i = 0; i < P; ++i)
                a[i] = (c[i] - lo) / s;
        } else {
            std::fill(a, a + P, Scalar(1) / static_cast<Scalar>(P));
        }
    }
    Tape::current().record({&scores}, out, [scores, out, argmin = std::move(argmin), total = std::move(total), N, P]() mutable {
        auto gin = scores.grad();
        auto gout = out.grad();
        for (int64_t n = 0; n < N; ++n) {
            const Scalar s = total[static_cast<size_t>(n)];
            if (!(s > 0))
                continue; // uniform fallback is constant in the scores
            const Scalar *g = gout.data() + n * P;
            const Scalar *a = out.ptr() + n * P;
            Scalar ga = 0;
            for (int64_t i = 0; i < P; ++i)
                ga += g[i] * a[i];
            Scalar shifted_total = 0;
            Scalar *gi = gin.data() + n * P;
            for (int64_t i = 0; i < P; ++i) {
                const Scalar d = (g[i] - ga) / s;
                gi[i] += d;
                shifted_total += d;
            }
            gi[argmin[static_cast<size_t>(n)]] -= shifted_total;
        }
    });
    return out;
}

Tensor attend_pool(const Tensor &features, const Tensor &alpha)
{
    if (features.ndim() != 4 || alpha.ndim() != 4 || alpha.dim(1) != 1)
        throw DimensionError("attend_pool expects features [N,C,H,W] and alpha [N,1,H,W], got " + shape_str(features.shape()) + " and " +
                             shape_str(alpha.shape()));
    if (alpha.dim(0) != features.dim(0) || alpha.dim(2) != features.dim(2) || alpha.dim(3) != features.dim(3))
        throw DimensionError("attend_pool: spatial mismatch between features " + shape_str(features.shape()) + " and alpha " +
                             shape_str(alpha.shape()));
    const int64_t N = features.dim(0), C = features.dim(1), P = features.dim(2) * features.dim(3);
    Tensor out(Shape{N, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const Scalar *f = features.ptr() + (n * C + c) * P;
            const Scalar *a = alpha.ptr() + n * P;
            Scalar s = 0;
            for (int64_t i = 0; i < P; ++i)
                s += a[i] * f[i];
            out[n * C + c] = s;
        }
    Tape::current().record({&features, &alpha}, out, [features, alpha, out, N, C, P]() mutable {
        auto gout = out.grad();
        if (features.requires_grad()) {
            auto gf = features.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const Scalar go = gout[static_cast<size_t>(n * C + c)];
                    Scalar *dst = gf.data() + (n * C + c) * P;
                    const Scalar *a = alpha.ptr() + n * P;
                    for (int64_t i = 0; i < P; ++i)
                        dst[i] += go * a[i];
                }
        }
        if (alpha.requires_grad()) {
            auto ga = alpha.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const Scalar go = gout[static_cast<size_t>(n * C + c)];
                    const Scalar *f = features.ptr() + (n * C + c) * P;
                    Scalar *dst = ga.data() + n * P;
                    for (int64_t i = 0; i < P; ++i)
                        dst[i] += go * f[i];
                }
        }
    });
    return out;
}

GateOutput grid_gate_forward(const Tensor &features, const Tensor &g_grid, const AttentionGateParams &params, Normalization mode, int scale)
{
    check_gate_shapes(features, params);
    if (g_grid.ndim() != 4 || g_grid.dim(0) != features.dim(0) || g_grid.dim(1) != params.c_g())
        throw DimensionError("grid_gate_forward: gate grid must be [N," + std::to_string(params.c_g()) + ",h,w], got " + shape_str(g_grid.shape()));
    const int64_t H = features.dim(2), W = features.dim(3), h = g_grid.dim(2), w = g_grid.dim(3);
    if (H % h != 0 || W % w != 0)
        throw DimensionError("grid_gate_forward: feature extents " + std::to_string(H) + "x" + std::to_string(W) +
                             " are not an integer multiple of the gate grid " + std::to_string(h) + "x" + std::to_string(w));

    const Tensor local = conv2d(features, params.wf, Tensor{});
    const Tensor global = bilinear_upsample2d(conv2d(g_grid, params.wg, params.bg), H, W);
    GateOutput result;
    result.map.scale = scale;
    result.map.mode = mode;
    result.map.compatibility = scores_from_terms(add(local, global), params);
    result.map.coefficients = normalize_attention(result.map.compatibility, mode);
    result.attended = attend_pool(features, result.map.coefficients);
    return result;
}

} // namespace agnet::inline AGNET_ABI
