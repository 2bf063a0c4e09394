#include <agnet/ops.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace agnet::inline AGNET_ABI {

namespace {

void require_4d(const Tensor &x, const char *op)
{
    if (x.ndim() != 4)
        throw DimensionError(std::string(op) + " expects [N,C,H,W], got " + shape_str(x.shape()));
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *op)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename F>
Tensor unary(const Tensor &x, F forward_fn)
{
    Tensor out(x.shape());
    const Scalar *src = x.ptr();
    Scalar *dst = out.ptr();
    for (int64_t i = 0; i < x.numel(); ++i)
        dst[i] = forward_fn(src[i]);
    return out;
}

struct LerpTap {
    int64_t i0;
    int64_t i1;
    Scalar frac;
};

std::vector<LerpTap> half_pixel_taps(int64_t in, int64_t out)
{
    std::vector<LerpTap> taps(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0)
            src = 0;
        int64_t i0 = static_cast<int64_t>(std::floor(src));
        if (i0 > in - 1)
            i0 = in - 1;
        const int64_t i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, static_cast<Scalar>(src - static_cast<double>(i0))};
    }
    return taps;
}

} // namespace

Tensor max_pool2d(const Tensor &input, int kernel, int stride)
{
    require_4d(input, "max_pool2d");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (kernel < 1 || stride < 1 || H < kernel || W < kernel || (H - kernel) % stride != 0 || (W - kernel) % stride != 0)
        throw DimensionError("max_pool2d: extents H=" + std::to_string(H) + " W=" + std::to_string(W) + " do not tile with kernel " +
                             std::to_string(kernel) + " stride " + std::to_string(stride));
    const int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    Tensor out(Shape{N, C, Ho, Wo});
    std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
    const Scalar *src = input.ptr();
    Scalar *dst = out.ptr();
    int64_t o = 0;
    for (int64_t plane = 0; plane < N * C; ++plane) {
        const Scalar *p = src + plane * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox, ++o) {
                int64_t best = (oy * stride) * W + ox * stride;
                for (int64_t ky = 0; ky < kernel; ++ky)
                    for (int64_t kx = 0; kx < kernel; ++kx) {
                        const int64_t idx = (oy * stride + ky) * W + ox * stride + kx;
                        if (p[idx] > p[best])
                            best = idx;
                    }
                dst[o] = p[best];
                argmax[static_cast<size_t>(o)] = plane * H * W + best;
            }
    }
    Tape::current().record({&input}, out, [input, out, argmax = std::move(argmax)]() mutable {
        auto gin = input.grad();
        auto gout = out.grad();
        for (size_t i = 0; i < argmax.size(); ++i)
            gin[static_cast<size_t>(argmax[i])] += gout[i];
    });
    return out;
}

Tensor batch_norm2d(const Tensor &input, const Tensor &gamma, const Tensor &beta, BatchNormStats &stats, bool training, Scalar momentum,
                    Scalar eps)
{
    require_4d(input, "batch_norm2d");
    const int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    if (gamma.numel() != C || beta.numel() != C || stats.mean.numel() != C || stats.var.numel() != C)
        throw DimensionError("batch_norm2d: per-channel parameters must have " + std::to_string(C) + " entries");
    const int64_t count = N * HW;
    Tensor out(input.shape());
    std::vector<Scalar> inv_std(static_cast<size_t>(C));
    Tensor xhat(input.shape());
    const Scalar *x = input.ptr();
    Scalar *xh = xhat.ptr();
    Scalar *y = out.ptr();

    for (int64_t c = 0; c < C; ++c) {
        Scalar mu, var;
        if (training) {
            double s = 0;
            for (int64_t n = 0; n < N; ++n) {
                const Scalar *p = x + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i)
                    s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0;
            for (int64_t n = 0; n < N; ++n) {
                const Scalar *p = x + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            mu = static_cast<Scalar>(m);
            var = static_cast<Scalar>(ss / static_cast<double>(count));
            const Scalar unbiased = count > 1 ? static_cast<Scalar>(ss / static_cast<double>(count - 1)) : var;
            stats.mean[c] = (Scalar(1) - momentum) * stats.mean[c] + momentum * mu;
            stats.var[c] = (Scalar(1) - momentum) * stats.var[c] + momentum * unbiased;
        } else {
            mu = stats.mean[c];
            var = stats.var[c];
        }
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(c)] = is;
        const Scalar g = gamma[c], bt = beta[c];
        for (int64_t n = 0; n < N; ++n) {
            const int64_t base = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
                const Scalar v = (x[base + i] - mu) * is;
                xh[base + i] = v;
                y[base + i] = g * v + bt;
            }
        }
    }

    Tape::current().record({&input, &gamma, &beta}, out,
                           [input, gamma, beta, out, xhat, inv_std = std::move(inv_std), training, N, C, HW, count]() mutable {
                               const Scalar *gout = out.grad().data();
                               const Scalar *xh = xhat.ptr();
                               Scalar *gin = input.requires_grad() ? input.grad().data() : nullptr;
                               for (int64_t c = 0; c < C; ++c) {
                                   double sum_dy = 0, sum_dy_xhat = 0;
                                   for (int64_t n = 0; n < N; ++n) {
                                       const int64_t base = (n * C + c) * HW;
                                       for (int64_t i = 0; i < HW; ++i) {
                                           sum_dy += gout[base + i];
                                           sum_dy_xhat += gout[base + i] * xh[base + i];
                                       }
                                   }
                                   if (gamma.requires_grad())
                                       gamma.grad()[static_cast<size_t>(c)] += static_cast<Scalar>(sum_dy_xhat);
                                   if (beta.requires_grad())
                                       beta.grad()[static_cast<size_t>(c)] += static_cast<Scalar>(sum_dy);
                                   if (!gin)
                                       continue;
                                   const Scalar k = gamma[c] * inv_std[static_cast<size_t>(c)];
                                   const Scalar mean_dy = training ? static_cast<Scalar>(sum_dy / static_cast<double>(count)) : Scalar(0);
                                   const Scalar mean_dy_xhat =
                                       training ? static_cast<Scalar>(sum_dy_xhat / static_cast<double>(count)) : Scalar(0);
                                   for (int64_t n = 0; n < N; ++n) {
                                       const int64_t base = (n * C + c) * HW;
                                       for (int64_t i = 0; i < HW; ++i)
                                           gin[base + i] += k * (gout[base + i] - mean_dy - xh[base + i] * mean_dy_xhat);
                                   }
                               }
                           });
    return out;
}

Tensor linear(const Tensor &input, const Tensor &weight, const Tensor &bias)
{
    if (input.ndim() != 2 || weight.ndim() != 2)
        throw DimensionError("linear expects input [N,Din] and weight [Dout,Din], got " + shape_str(input.shape()) + " and " +
                             shape_str(weight.shape()));
    const int64_t N = input.dim(0), Din = input.dim(1), Dout = weight.dim(0);
    if (weight.dim(1) != Din)
        throw DimensionError("linear: input Din=" + std::to_string(Din) + " but weight Din=" + std::to_string(weight.dim(1)));
    if (bias.defined() && bias.numel() != Dout)
        throw DimensionError("linear: bias must have " + std::to_string(Dout) + " entries");
    Tensor out(Shape{N, Dout});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < Dout; ++o) {
            Scalar acc = 0;
            for (int64_t i = 0; i < Din; ++i)
                acc += weight[o * Din + i] * input[n * Din + i];
            out[n * Dout + o] = bias.defined() ? acc + bias[o] : acc;
        }
    Tape::current().record({&input, &weight, &bias}, out, [input, weight, bias, out, N, Din, Dout]() mutable {
        auto gout = out.grad();
        if (input.requires_grad()) {
            auto gin = input.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t o = 0; o < Dout; ++o) {
                    const Scalar go = gout[static_cast<size_t>(n * Dout + o)];
                    for (int64_t i = 0; i < Din; ++i)
                        gin[static_cast<size_t>(n * Din + i)] += go * weight[o * Din + i];
                }
        }
        if (weight.requires_grad()) {
            auto gw = weight.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t o = 0; o < Dout; ++o) {
                    const Scalar go = gout[static_cast<size_t>(n * Dout + o)];
                    for (int64_t i = 0; i < Din; ++i)
                        gw[static_cast<size_t>(o * Din + i)] += go * input[n * Din + i];
                }
        }
        if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t o = 0; o < Dout; ++o)
                    gb[static_cast<size_t>(o)] += gout[static_cast<size_t>(n * Dout + o)];
        }
    });
    return out;
}

Tensor bilinear_upsample2d(const Tensor &input, int64_t out_h, int64_t out_w)
{
    require_4d(input, "bilinear_upsample2d");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (out_h <= 0 || out_w <= 0)
        throw DimensionError("bilinear_upsample2d: target extents must be positive");
    if (out_h < H || out_w < W)
        throw DimensionError("bilinear_upsample2d: target " + std::to_string(out_h) + "x" + std::to_string(out_w) + " smaller than input " +
                             std::to_string(H) + "x" + std::to_string(W));
    const auto ty = half_pixel_taps(H, out_h);
    const auto tx = half_pixel_taps(W, out_w);
    Tensor out(Shape{N, C, out_h, out_w});
    for (int64_t plane = 0; plane < N * C; ++plane) {
        const Scalar *p = input.ptr() + plane * H * W;
        Scalar *q = out.ptr() + plane * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const LerpTap &a = ty[static_cast<size_t>(y)];
            for (int64_t x = 0; x < out_w; ++x) {
                const LerpTap &b = tx[static_cast<size_t>(x)];
                const Scalar v00 = p[a.i0 * W + b.i0], v01 = p[a.i0 * W + b.i1];
                const Scalar v10 = p[a.i1 * W + b.i0], v11 = p[a.i1 * W + b.i1];
                const Scalar top = v00 + (v01 - v00) * b.frac;
                const Scalar bot = v10 + (v11 - v10) * b.frac;
                q[y * out_w + x] = top + (bot - top) * a.frac;
            }
        }
    }
    Tape::current().record({&input}, out, [input, out, ty, tx, N, C, H, W, out_h, out_w]() mutable {
        auto gin = input.grad();
        auto gout = out.grad();
        for (int64_t plane = 0; plane < N * C; ++plane) {
            Scalar *p = gin.data() + plane * H * W;
            const Scalar *q = gout.data() + plane * out_h * out_w;
            for (int64_t y = 0; y < out_h; ++y) {
                const LerpTap &a = ty[static_cast<size_t>(y)];
                for (int64_t x = 0; x < out_w; ++x) {
                    const LerpTap &b = tx[static_cast<size_t>(x)];
                    const Scalar g = q[y * out_w + x];
                    const Scalar gt = g * (Scalar(1) - a.frac), gb = g * a.frac;
                    p[a.i0 * W + b.i0] += gt * (Scalar(1) - b.frac);
                    p[a.i0 * W + b.i1] += gt * b.frac;
                    p[a.i1 * W + b.i0] += gb * (Scalar(1) - b.frac);
                    p[a.i1 * W + b.i1] += gb * b.frac;
                }
            }
        }
    });
    return out;
}

Tensor global_avg_pool(const Tensor &input)
{
    require_4d(input, "global_avg_pool");
    const int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    Tensor out(Shape{N, C});
    for (int64_t k = 0; k < N * C; ++k) {
        Scalar s = 0;
        for (int64_t i = 0; i < HW; ++i)
            s += input[k * HW + i];
        out[k] = s / static_cast<Scalar>(HW);
    }
    Tape::current().record({&input}, out, [input, out, N, C, HW]() mutable {
        auto gin = input.grad();
        auto gout = out.grad();
        for (int64_t k = 0; k < N * C; ++k) {
            const Scalar g = gout[static_cast<size_t>(k)] / static_cast<Scalar>(HW);
            for (int64_t i = 0; i < HW; ++i)
                gin[static_cast<size_t>(k * HW + i)] += g;
        }
    });
    return out;
}

Tensor relu(const Tensor &x)
{
    Tensor out = unary(x, [](Scalar v) { return v > 0 ? v : Scalar(0); });
    Tape::current().record({&x}, out, [x, out]() mutable {
        Scalar *gin = x.grad().data();
        const Scalar *gout = out.grad().data();
        const Scalar *xv = x.ptr();
        const int64_t n = x.numel();
        for (int64_t i = 0; i < n; ++i)
            gin[i] += xv[i] > 0 ? gout[i] : Scalar(0);
    });
    return out;
}

Tensor sigmoid(const Tensor &x)
{
    Tensor out = unary(x, [](Scalar v) {
        if (v >= 0)
            return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
    });
    Tape::current().record({&x}, out, [x, out]() mutable {
        auto gin = x.grad();
        auto gout = out.grad();
        for (size_t i = 0; i < gin.size(); ++i) {
            const Scalar s = out[static_cast<int64_t>(i)];
            gin[i] += gout[i] * s * (Scalar(1) - s);
        }
    });
    return out;
}

Tensor log(const Tensor &x, Scalar floor)
{
    Tensor out = unary(x, [floor](Scalar v) { return std::log(std::max(v, floor)); });
    Tape::current().record({&x}, out, [x, out, floor]() mutable {
        auto gin = x.grad();
        auto gout = out.grad();
        for (size_t i = 0; i < gin.size(); ++i) {
            const Scalar v = x[static_cast<int64_t>(i)];
            if (v > floor)
                gin[i] += gout[i] / v;
        }
    });
    return out;
}

Tensor add(const Tensor &a, const Tensor &b)
{
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i)
        out[i] = a[i] + b[i];
    Tape::current().record({&a, &b}, out, [a, b, out]() mutable {
        auto gout = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i)
                ga[i] += gout[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (size_t i = 0; i < gb.size(); ++i)
                gb[i] += gout[i];
        }
    });
    return out;
}

Tensor sub(const Tensor &a, const Tensor &b)
{
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i)
        out[i] = a[i] - b[i];
    Tape::current().record({&a, &b}, out, [a, b, out]() mutable {
        auto gout = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i)
                ga[i] += gout[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (size_t i = 0; i < gb.size(); ++i)
                gb[i] -= gout[i];
        }
    });
    return out;
}

Tensor mul(const Tensor &a, const Tensor &b)
{
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i)
        out[i] = a[i] * b[i];
    Tape::current().record({&a, &b}, out, [a, b, out]() mutable {
        auto gout = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i)
                ga[i] += gout[i] * b[static_cast<int64_t>(i)];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (size_t i = 0; i < gb.size(); ++i)
                gb[i] += gout[i] * a[static_cast<int64_t>(i)];
        }
    });
    return out;
}

Tensor scale(const Tensor &a, Scalar s)
{
    Tensor out = unary(a, [s](Scalar v) { return v * s; });
    Tape::current().record({&a}, out, [a, out, s]() mutable {
        auto ga = a.grad();
        auto gout = out.grad();
        for (size_t i = 0; i < ga.size(); ++i)
            ga[i] += gout[i] * s;
    });
    return out;
}

Tensor add_channel_broadcast(const Tensor &x, const Tensor &v)
{
    require_4d(x, "add_channel_broadcast");
    const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (v.ndim() != 2 || v.dim(0) != N || v.dim(1) != C)
        throw DimensionError("add_channel_broadcast: vector must be [" + std::to_string(N) + "," + std::to_string(C) + "], got " +
                             shape_str(v.shape()));
    Tensor out(x.shape());
    for (int64_t k = 0; k < N * C; ++k)
        for (int64_t i = 0; i < HW; ++i)
            out[k * HW + i] = x[k * HW + i] + v[k];
    Tape::current().record({&x, &v}, out, [x, v, out, N, C, HW]() mutable {
        auto gout = out.grad();
        if (x.requires_grad()) {
            auto gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i)
                gx[i] += gout[i];
        }
        if (v.requires_grad()) {
            auto gv = v.grad();
            for (int64_t k = 0; k < N * C; ++k)
                for (int64_t i = 0; i < HW; ++i)
                    gv[static_cast<size_t>(k)] += gout[static_cast<size_t>(k * HW + i)];
        }
    });
    return out;
}

Tensor sum(const Tensor &x)
{
    Scalar s = 0;
    for (int64_t i = 0; i < x.numel(); ++i)
        s += x[i];
    Tensor out = Tensor::scalar(s);
    Tape::current().record({&x}, out, [x, out]() mutable {
        auto gx = x.grad();
        const Scalar g = out.grad()[0];
        for (auto &v : gx)
            v += g;
    });
    return out;
}

Tensor mean(const Tensor &x)
{
    return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

Tensor reshape(const Tensor &x, Shape shape)
{
    Tensor out(std::move(shape), std::vector<Scalar>(x.data().begin(), x.data().end()));
    Tape::current().record({&x}, out, [x, out]() mutable {
        auto gx = x.grad();
        auto gout = out.grad();
        for (size_t i = 0; i < gx.size(); ++i)
            gx[i] += gout[i];
    });
    return out;
}

Tensor concat_features(const std::vector<Tensor> &parts)
{
    if (parts.empty())
        throw DimensionError("concat_features: nothing to concatenate");
    const int64_t N = parts.front().dim(0);
    int64_t D = 0;
    for (const auto &p : parts) {
        if (p.ndim() != 2 || p.dim(0) != N)
            throw DimensionError("concat_features: parts must be [N,Di] with a common N");
        D += p.dim(1);
    }
    Tensor out(Shape{N, D});
    int64_t offset = 0;
    for (const auto &p : parts) {
        const int64_t d = p.dim(1);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < d; ++i)
                out[n * D + offset + i] = p[n * d + i];
        offset += d;
    }
    std::vector<const Tensor *> inputs;
    for (const auto &p : parts)
        inputs.push_back(&p);
    Tape::current().record(inputs, out, [parts, out, N, D]() mutable {
        auto gout = out.grad();
        int64_t offset = 0;
        for (auto &p : parts) {
            const int64_t d = p.dim(1);
            if (p.requires_grad()) {
                auto gp = p.grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t i = 0; i < d; ++i)
                        gp[static_cast<size_t>(n * d + i)] += gout[static_cast<size_t>(n * D + offset + i)];
            }
            offset += d;
        }
    });
    return out;
}

Tensor softmax(const Tensor &x)
{
    const int64_t K = x.dim(-1);
    const int64_t rows = x.numel() / K;
    Tensor out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar *src = x.ptr() + r * K;
        Scalar *dst = out.ptr() + r * K;
        const Scalar m = *std::max_element(src, src + K);
        Scalar z = 0;
        for (int64_t k = 0; k < K; ++k) {
            dst[k] = std::exp(src[k] - m);
            z += dst[k];
        }
        for (int64_t k = 0; k < K; ++k)
            dst[k] /= z;
    }
    Tape::current().record({&x}, out, [x, out, K, rows]() mutable {
        auto gx = x.grad();
        auto gout = out.grad();
        for (int64_t r = 0; r < rows; ++r) {
            Scalar dot = 0;
            for (int64_t k = 0; k < K; ++k)
                dot += gout[static_cast<size_t>(r * K + k)] * out[r * K + k];
            for (int64_t k = 0; k < K; ++k) {
                const auto i = static_cast<size_t>(r * K + k);
                gx[i] += out[r * K + k] * (gout[i] - dot);
            }
        }
    });
    return out;
}

Tensor log_softmax(const Tensor &x)
{
    const int64_t K = x.dim(-1);
    const int64_t rows = x.numel() / K;
    Tensor out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const Scalar *src = x.ptr() + r * K;
        Scalar *dst = out.ptr() + r * K;
        const Scalar m = *std::max_element(src, src + K);
        Scalar z = 0;
        for (int64_t k = 0; k < K; ++k)
            z += std::exp(src[k] - m);
        const Scalar log_z = std::log(z);
        for (int64_t k = 0; k < K; ++k)
            dst[k] = (src[k] - m) - log_z;
    }
    Tape::current().record({&x}, out, [x, out, K, rows]() mutable {
        auto gx = x.grad();
        auto gout = out.grad();
        for (int64_t r = 0; r < rows; ++r) {
            Scalar total = 0;
            for (int64_t k = 0; k < K; ++k)
                total += gout[static_cast<size_t>(r * K + k)];
            for (int64_t k = 0; k < K; ++k) {
                const auto i = static_cast<size_t>(r * K + k);
                gx[i] += gout[i] - std::exp(out[r * K + k]) * total;
            }
        }
    });
    return out;
}

Tensor weighted_cross_entropy(const Tensor &logits, std::span<const int> labels, std::span<const Scalar> class_weights)
{
    if (logits.ndim() != 2)
        throw DimensionError("weighted_cross_entropy expects logits [N,K], got " + shape_str(logits.shape()));
    const int64_t N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != N)
        throw DimensionError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
    if (!class_weights.empty() && static_cast<int64_t>(class_weights.size()) != K)
        throw DimensionError("weighted_cross_entropy: class weight count must equal K=" + std::to_string(K));
    for (int label : labels)
        if (label < 0 || label >= K)
            throw DimensionError("weighted_cross_entropy: label " + std::to_string(label) + " outside [0," + std::to_string(K) + ")");

    std::vector<Scalar> probs(static_cast<size_t>(N * K));
    std::vector<Scalar> w(static_cast<size_t>(N));
    Scalar total = 0, weight_sum = 0;
    for (int64_t n = 0; n < N; ++n) {
        const Scalar *z = logits.ptr() + n * K;
        const Scalar m = *std::max_element(z, z + K);
        Scalar s = 0;
        for (int64_t k = 0; k < K; ++k) {
            probs[static_cast<size_t>(n * K + k)] = std::exp(z[k] - m);
            s += probs[static_cast<size_t>(n * K + k)];
        }
        for (int64_t k = 0; k < K; ++k)
            probs[static_cast<size_t>(n * K + k)] /= s;
        const int y = labels[static_cast<size_t>(n)];
        const Scalar wn = class_weights.empty() ? Scalar(1) : class_weights[static_cast<size_t>(y)];
        w[static_cast<size_t>(n)] = wn;
        total += wn * (m + std::log(s) - z[y]);
        weight_sum += wn;
    }
    if (weight_sum <= 0)
        throw Error("weighted_cross_entropy: total sample weight is zero");
    Tensor out = Tensor::scalar(total / weight_sum);
    std::vector<int> ys(labels.begin(), labels.end());
    Tape::current().record({&logits}, out, [logits, out, probs = std::move(probs), w = std::move(w), ys = std::move(ys), weight_sum, N, K]() mutable {
        auto g = logits.grad();
        const Scalar go = out.grad()[0] / weight_sum;
        for (int64_t n = 0; n < N; ++n) {
            const Scalar c = go * w[static_cast<size_t>(n)];
            for (int64_t k = 0; k < K; ++k) {
                const auto i = static_cast<size_t>(n * K + k);
                g[i] += c * (probs[i] - (k == ys[static_cast<size_t>(n)] ? Scalar(1) : Scalar(0)));
            }
        }
    });
    return out;
}

} // namespace agnet::inline AGNET_ABI
