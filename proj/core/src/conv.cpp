#include <agnet/ops.hpp>

#include <Eigen/Core>

#include <algorithm>

namespace agnet::inline AGNET_ABI {

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecC = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ConvGeometry {
    int64_t n, cin, h, w;
    int64_t cout, kh, kw;
    int64_t stride, pad;
    int64_t ho, wo;

    int64_t patch() const { return cin * kh * kw; }
    int64_t positions() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

/// Output columns [lo, hi) whose input column ox*stride - pad + kj is in range.
inline void valid_span(const ConvGeometry &g, int64_t kj, int64_t &lo, int64_t &hi)
{
    const int64_t off = kj - g.pad;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    hi = g.w - off <= 0 ? 0 : std::min(g.wo, (g.w - off + g.stride - 1) / g.stride);
    lo = std::min(lo, hi);
}

void im2col(const ConvGeometry &g, const Scalar *image, Scalar *col)
{
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ki = 0; ki < g.kh; ++ki)
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                Scalar *row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
                const Scalar *plane = image + c * g.h * g.w;
                int64_t lo, hi;
                valid_span(g, kj, lo, hi);
                const int64_t off = kj - g.pad;
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ki;
                    Scalar *dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, Scalar(0));
                        continue;
                    }
                    std::fill(dst, dst + lo, Scalar(0));
                    const Scalar *src = plane + iy * g.w + off;
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (int64_t ox = lo; ox < hi; ++ox)
                            dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.wo, Scalar(0));
                }
            }
}

void col2im_add(const ConvGeometry &g, const Scalar *col, Scalar *image)
{
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ki = 0; ki < g.kh; ++ki)
            for (int64_t kj = 0; kj < g.kw; ++kj) {
                const Scalar *row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
                Scalar *plane = image + c * g.h * g.w;
                int64_t lo, hi;
                valid_span(g, kj, lo, hi);
                const int64_t off = kj - g.pad;
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    Scalar *dst = plane + iy * g.w + off;
                    const Scalar *src = row + oy * g.wo;
                    for (int64_t ox = lo; ox < hi; ++ox)
                        dst[ox * g.stride] += src[ox];
                }
            }
}

} // namespace

Tensor conv2d(const Tensor &input, const Tensor &weight, const Tensor &bias, int stride, int padding)
{
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw DimensionError("conv2d expects input [N,C,H,W] and weight [Cout,Cin,kh,kw], got " + shape_str(input.shape()) + " and " +
                             shape_str(weight.shape()));
    ConvGeometry g{};
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (weight.dim(1) != g.cin)
        throw DimensionError("conv2d channel axis mismatch: input C=" + std::to_string(g.cin) + ", weight Cin=" + std::to_string(weight.dim(1)));
    if (g.kh % 2 == 0 || g.kw % 2 == 0)
        throw DimensionError("conv2d kernel extents must be odd, got " + shape_str(weight.shape()));
    if (stride < 1 || padding < 0)
        throw DimensionError("conv2d needs stride >= 1 and padding >= 0");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout))
        throw DimensionError("conv2d bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
        throw DimensionError("conv2d kernel larger than padded input on H/W axes");
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
    const int64_t K = g.patch();
    const int64_t P = g.positions();
    const int64_t in_stride = g.cin * g.h * g.w;
    Eigen::Map<const MatR> wmat(weight.ptr(), g.cout, K);
    std::vector<Scalar> col(g.pointwise() ? 0 : static_cast<size_t>(K * P));

    for (int64_t n = 0; n < g.n; ++n) {
        const Scalar *src = input.ptr() + n * in_stride;
        if (!g.pointwise()) {
            im2col(g, src, col.data());
            src = col.data();
        }
        Eigen::Map<MatR> o(out.ptr() + n * g.cout * P, g.cout, P);
        o.noalias() = wmat * Eigen::Map<const MatR>(src, K, P);
        if (bias.defined())
            o.colwise() += Eigen::Map<const VecC>(bias.ptr(), g.cout);
    }

    Tape::current().record({&input, &weight, &bias}, out, [input, weight, bias, out, g]() mutable {
        const int64_t K = g.patch();
        const int64_t P = g.positions();
        const int64_t in_stride = g.cin * g.h * g.w;
        const bool need_w = weight.requires_grad();
        const bool need_b = bias.defined() && bias.requires_grad();
        const bool need_x = input.requires_grad();
        Eigen::Map<const MatR> wmat(weight.ptr(), g.cout, K);
        std::vector<Scalar> col(g.pointwise() ? 0 : static_cast<size_t>(K * P));
        std::vector<Scalar> dcol(need_x && !g.pointwise() ? static_cast<size_t>(K * P) : 0);
        const Scalar *gout_base = out.grad().data();
        for (int64_t n = 0; n < g.n; ++n) {
            Eigen::Map<const MatR> gout(gout_base + n * g.cout * P, g.cout, P);
            if (need_w) {
                const Scalar *src = input.ptr() + n * in_stride;
                if (!g.pointwise()) {
                    im2col(g, src, col.data());
                    src = col.data();
                }
                Eigen::Map<MatR> gw(weight.grad().data(), g.cout, K);
                gw.noalias() += gout * Eigen::Map<const MatR>(src, K, P).transpose();
            }
            if (need_b) {
                Eigen::Map<VecC> gb(bias.grad().data(), g.cout);
                gb += gout.rowwise().sum();
            }
            if (need_x) {
                Scalar *gin = input.grad().data() + n * in_stride;
                if (g.pointwise()) {
                    Eigen::Map<MatR> gi(gin, K, P);
                    gi.noalias() += wmat.transpose() * gout;
                } else {
                    Eigen::Map<MatR> dc(dcol.data(), K, P);
                    dc.noalias() = wmat.transpose() * gout;
                    col2im_add(g, dcol.data(), gin);
                }
            }
        }
    });
    return out;
}

} // namespace agnet::inline AGNET_ABI
