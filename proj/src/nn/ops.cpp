#include "cellbloom/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace cellbloom::nn {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

void require_rank4(const Shape& s, const char* op) {
    if (s.size() != 4) {
        throw ShapeError(std::string(op) + ": expected NCHW input, got " + shape_to_string(s));
    }
}

int conv_out_size(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

// Unfolds patches of x (N, C, H, W) into cols ((C*K*K) x (N*Ho*Wo)), row-major.
template <typename T>
void im2col(const T* x, int n_batch, int channels, int height, int width, int kernel, int stride, int padding,
            int out_h, int out_w, T* cols) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    const std::size_t row_len = static_cast<std::size_t>(n_batch) * out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < kernel; ++ki) {
            for (int kj = 0; kj < kernel; ++kj) {
                T* row = cols + (static_cast<std::size_t>((c * kernel + ki) * kernel + kj)) * row_len;
                for (int n = 0; n < n_batch; ++n) {
                    const T* src = x + (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (int oh = 0; oh < out_h; ++oh) {
                        const int ih = oh * stride - padding + ki;
                        T* dst = row + (static_cast<std::size_t>(n) * out_h + oh) * out_w;
                        if (ih < 0 || ih >= height) {
                            std::fill(dst, dst + out_w, T(0));
                            continue;
                        }
                        const T* src_row = src + static_cast<std::size_t>(ih) * width;
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride - padding + kj;
                            dst[ow] = (iw >= 0 && iw < width) ? src_row[iw] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters cols back into x (accumulating).
template <typename T>
void col2im(const T* cols, int n_batch, int channels, int height, int width, int kernel, int stride, int padding,
            int out_h, int out_w, T* x) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    const std::size_t row_len = static_cast<std::size_t>(n_batch) * out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < kernel; ++ki) {
            for (int kj = 0; kj < kernel; ++kj) {
                const T* row = cols + (static_cast<std::size_t>((c * kernel + ki) * kernel + kj)) * row_len;
                for (int n = 0; n < n_batch; ++n) {
                    T* dst = x + (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (int oh = 0; oh < out_h; ++oh) {
                        const int ih = oh * stride - padding + ki;
                        if (ih < 0 || ih >= height) continue;
                        const T* src = row + (static_cast<std::size_t>(n) * out_h + oh) * out_w;
                        T* dst_row = dst + static_cast<std::size_t>(ih) * width;
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride - padding + kj;
                            if (iw >= 0 && iw < width) dst_row[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

// (N, C, S) <-> (C, N*S) layout swaps.
template <typename T>
void nchw_to_cn(const T* src, int n_batch, int channels, std::size_t spatial, T* dst) {
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const T* s = src + (static_cast<std::size_t>(n) * channels + c) * spatial;
            T* d = dst + (static_cast<std::size_t>(c) * n_batch + n) * spatial;
            std::copy(s, s + spatial, d);
        }
    }
}

template <typename T>
void cn_to_nchw(const T* src, int n_batch, int channels, std::size_t spatial, T* dst) {
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const T* s = src + (static_cast<std::size_t>(c) * n_batch + n) * spatial;
            T* d = dst + (static_cast<std::size_t>(n) * channels + c) * spatial;
            std::copy(s, s + spatial, d);
        }
    }
}

template <typename T>
void add_channel_bias(Tensor<T>& out, const Tensor<T>& bias) {
    const int n_batch = out.dim(0);
    const int channels = out.dim(1);
    const std::size_t spatial = static_cast<std::size_t>(out.dim(2)) * out.dim(3);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
            const T b = bias[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < spatial; ++i) p[i] += b;
        }
    }
}

template <typename T>
void accumulate_channel_sums(const Tensor<T>& grad, Tensor<T>& bias_grad) {
    const int n_batch = grad.dim(0);
    const int channels = grad.dim(1);
    const std::size_t spatial = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const T* p = grad.data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
        }
        bias_grad[static_cast<std::size_t>(c)] += static_cast<T>(acc);
    }
}

int reflect_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

}  // namespace

namespace {

// Samples per im2col chunk so the unfolded patch matrix stays near cache size.
int chunk_samples(std::size_t floats_per_sample, int n_batch) {
    constexpr std::size_t kBudget = std::size_t{1} << 18;
    const std::size_t fit = std::max<std::size_t>(1, kBudget / std::max<std::size_t>(1, floats_per_sample));
    return static_cast<int>(std::min<std::size_t>(fit, static_cast<std::size_t>(n_batch)));
}

// Stride-1 convolution for outputs with few channels, where an im2col GEMM
// would be memory bound. Rows are processed in blocks of kBlock outputs held
// in registers; inputs are copied into zero-padded planes wide enough that the
// last block never reads out of bounds.
constexpr int kBlock = 16;
constexpr int kMaxDirectKernel = 7;

int round_up(int v, int m) { return (v + m - 1) / m * m; }

template <typename T>
struct LaneVec {
    typedef T type __attribute__((vector_size(kBlock * sizeof(T))));
};
template <typename T>
using Lanes = typename LaneVec<T>::type;

template <typename T>
inline Lanes<T> load_lanes(const T* p) {
    Lanes<T> v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

// out[co][oh][ow] += sum_{ci,ki,kj} wt[((co * c_src + ci) * K + ki) * K + kj] * src[ci][oh + ki][ow + kj]
// src planes are src_h x src_w with src_w >= round_up(out_w, kBlock) + K - 1.
template <typename T, int K>
void correlate_planes(const T* __restrict src, int c_src, int src_h, int src_w, const T* __restrict wt, int c_dst,
                      int out_h, int out_w, T* __restrict out) {
    const int blocks = (out_w + kBlock - 1) / kBlock;
    for (int co = 0; co < c_dst; ++co)
        for (int oh = 0; oh < out_h; ++oh)
            for (int b = 0; b < blocks; ++b) {
                Lanes<T> acc = {};
                for (int ci = 0; ci < c_src; ++ci) {
                    const T* wrow = wt + (static_cast<std::size_t>(co) * c_src + ci) * K * K;
                    for (int ki = 0; ki < K; ++ki) {
                        const T* s = src + (static_cast<std::size_t>(ci) * src_h + oh + ki) * src_w + b * kBlock;
                        for (int kj = 0; kj < K; ++kj) acc += wrow[ki * K + kj] * load_lanes(s + kj);
                    }
                }
                const int valid = std::min(kBlock, out_w - b * kBlock);
                T* o = out + (static_cast<std::size_t>(co) * out_h + oh) * out_w + b * kBlock;
                for (int l = 0; l < valid; ++l) o[l] += acc[l];
            }
}

// Copies (c, h, w) planes into zeroed (c, dst_h, dst_w) planes at offset (off, off).
template <typename T>
void pad_planes(const T* src, int c, int h, int w, int off, int dst_h, int dst_w, std::vector<T>& dst) {
    dst.assign(static_cast<std::size_t>(c) * dst_h * dst_w, T(0));
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
            const T* s = src + (static_cast<std::size_t>(ch) * h + y) * w;
            std::copy(s, s + w, dst.data() + (static_cast<std::size_t>(ch) * dst_h + y + off) * dst_w + off);
        }
}

template <typename T, int K>
void direct_conv_forward_k(const T* x, const T* weight, int n_batch, int c_in, int h, int w, int c_out, int padding,
                           int out_h, int out_w, T* out) {
    const int src_h = h + 2 * padding;
    const int src_w = std::max(w + 2 * padding, round_up(out_w, kBlock) + K - 1);
    std::vector<T> xp;
    for (int n = 0; n < n_batch; ++n) {
        pad_planes(x + static_cast<std::size_t>(n) * c_in * h * w, c_in, h, w, padding, src_h, src_w, xp);
        correlate_planes<T, K>(xp.data(), c_in, src_h, src_w, weight, c_out, out_h, out_w,
                               out + static_cast<std::size_t>(n) * c_out * out_h * out_w);
    }
}

template <typename T, int K>
void direct_conv_backward_k(const T* x, const T* weight, const T* dy, int n_batch, int c_in, int h, int w, int c_out,
                            int padding, int out_h, int out_w, T* dx, T* dweight) {
    const int hp = h + 2 * padding, wp = w + 2 * padding;
    const int gw = round_up(out_w, kBlock);
    const int src_w = std::max(wp, gw + K - 1);
    // Input gradient: correlate the (K-1)-padded output gradient with the
    // spatially flipped, channel-transposed kernel.
    std::vector<T> flipped;
    if (dx) {
        flipped.resize(static_cast<std::size_t>(c_in) * c_out * K * K);
        for (int co = 0; co < c_out; ++co)
            for (int ci = 0; ci < c_in; ++ci)
                for (int ki = 0; ki < K; ++ki)
                    for (int kj = 0; kj < K; ++kj)
                        flipped[((static_cast<std::size_t>(ci) * c_out + co) * K + (K - 1 - ki)) * K + (K - 1 - kj)] =
                            weight[((static_cast<std::size_t>(co) * c_in + ci) * K + ki) * K + kj];
    }
    const int gp_h = out_h + 2 * (K - 1);
    const int gp_w = round_up(wp, kBlock) + K - 1;
    std::vector<T> xp, gz, gp, dxp;
    for (int n = 0; n < n_batch; ++n) {
        const T* g = dy + static_cast<std::size_t>(n) * c_out * out_h * out_w;
        if (dweight) {
            pad_planes(x + static_cast<std::size_t>(n) * c_in * h * w, c_in, h, w, padding, hp, src_w, xp);
            pad_planes(g, c_out, out_h, out_w, 0, out_h, gw, gz);
            for (int co = 0; co < c_out; ++co)
                for (int ci = 0; ci < c_in; ++ci)
                    for (int ki = 0; ki < K; ++ki) {
                        Lanes<T> acc[K] = {};
                        for (int oh = 0; oh < out_h; ++oh) {
                            const T* gr = gz.data() + (static_cast<std::size_t>(co) * out_h + oh) * gw;
                            const T* s = xp.data() + (static_cast<std::size_t>(ci) * hp + oh + ki) * src_w;
                            for (int b = 0; b < gw; b += kBlock) {
                                const Lanes<T> gv = load_lanes(gr + b);
                                for (int kj = 0; kj < K; ++kj) acc[kj] += gv * load_lanes(s + b + kj);
                            }
                        }
                        T* dw = dweight + ((static_cast<std::size_t>(co) * c_in + ci) * K + ki) * K;
                        for (int kj = 0; kj < K; ++kj) {
                            T sum = T(0);
                            for (int l = 0; l < kBlock; ++l) sum += acc[kj][l];
                            dw[kj] += sum;
                        }
                    }
        }
        if (dx) {
            pad_planes(g, c_out, out_h, out_w, K - 1, gp_h, gp_w, gp);
            dxp.assign(static_cast<std::size_t>(c_in) * hp * wp, T(0));
            correlate_planes<T, K>(gp.data(), c_out, gp_h, gp_w, flipped.data(), c_in, hp, wp, dxp.data());
            T* d = dx + static_cast<std::size_t>(n) * c_in * h * w;
            for (int ci = 0; ci < c_in; ++ci)
                for (int y = 0; y < h; ++y) {
                    const T* s = dxp.data() + (static_cast<std::size_t>(ci) * hp + y + padding) * wp + padding;
                    T* row = d + (static_cast<std::size_t>(ci) * h + y) * w;
                    for (int xx = 0; xx < w; ++xx) row[xx] += s[xx];
                }
        }
    }
}

template <typename T>
void direct_conv_forward(const T* x, const T* weight, int n_batch, int c_in, int h, int w, int c_out, int kernel,
                         int padding, int out_h, int out_w, T* out) {
    switch (kernel) {
#define CELLBLOOM_DIRECT_CASE(K) \
    case K: return direct_conv_forward_k<T, K>(x, weight, n_batch, c_in, h, w, c_out, padding, out_h, out_w, out);
        CELLBLOOM_DIRECT_CASE(1)
        CELLBLOOM_DIRECT_CASE(2)
        CELLBLOOM_DIRECT_CASE(3)
        CELLBLOOM_DIRECT_CASE(4)
        CELLBLOOM_DIRECT_CASE(5)
        CELLBLOOM_DIRECT_CASE(6)
        CELLBLOOM_DIRECT_CASE(7)
#undef CELLBLOOM_DIRECT_CASE
    }
    throw std::logic_error("direct convolution kernel size out of range");
}

template <typename T>
void direct_conv_backward(const T* x, const T* weight, const T* dy, int n_batch, int c_in, int h, int w, int c_out,
                          int kernel, int padding, int out_h, int out_w, T* dx, T* dweight) {
    switch (kernel) {
#define CELLBLOOM_DIRECT_CASE(K)                                                                               \
    case K:                                                                                                    \
        return direct_conv_backward_k<T, K>(x, weight, dy, n_batch, c_in, h, w, c_out, padding, out_h, out_w, \
                                            dx, dweight);
        CELLBLOOM_DIRECT_CASE(1)
        CELLBLOOM_DIRECT_CASE(2)
        CELLBLOOM_DIRECT_CASE(3)
        CELLBLOOM_DIRECT_CASE(4)
        CELLBLOOM_DIRECT_CASE(5)
        CELLBLOOM_DIRECT_CASE(6)
        CELLBLOOM_DIRECT_CASE(7)
#undef CELLBLOOM_DIRECT_CASE
    }
    throw std::logic_error("direct convolution kernel size out of range");
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom) {
    require_rank4(x.shape(), "conv2d");
    require_rank4(weight.shape(), "conv2d weight");
    const int n_batch = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int c_out = weight.shape()[0], kernel = weight.shape()[2];
    if (weight.shape()[1] != c_in || weight.shape()[3] != kernel) {
        throw ShapeError("conv2d: weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
    }
    const int out_h = conv_out_size(h, kernel, geom.stride, geom.padding);
    const int out_w = conv_out_size(w, kernel, geom.stride, geom.padding);
    if (out_h <= 0 || out_w <= 0) {
        throw ShapeError("conv2d: empty output for input " + shape_to_string(x.shape()));
    }
    const int k_dim = c_in * kernel * kernel;
    const std::size_t spatial = static_cast<std::size_t>(out_h) * out_w;
    const std::size_t in_plane = static_cast<std::size_t>(c_in) * h * w;
    const bool direct = geom.stride == 1 && (c_out <= 4 || c_in <= 4) && kernel <= kMaxDirectKernel;
    const int chunk = chunk_samples(static_cast<std::size_t>(k_dim) * spatial, n_batch);

    Tensor<T> out({n_batch, c_out, out_h, out_w});
    if (direct) {
        direct_conv_forward(x.value().data(), weight.value().data(), n_batch, c_in, h, w, c_out, kernel,
                            geom.padding, out_h, out_w, out.data());
    } else {
        std::vector<T> cols(static_cast<std::size_t>(k_dim) * chunk * spatial);
        MatRM<T> out_cn(c_out, static_cast<Eigen::Index>(chunk * spatial));
        for (int n0 = 0; n0 < n_batch; n0 += chunk) {
            const int cn = std::min(chunk, n_batch - n0);
            const auto cols_n = static_cast<Eigen::Index>(cn * spatial);
            im2col(x.value().data() + n0 * in_plane, cn, c_in, h, w, kernel, geom.stride, geom.padding, out_h,
                   out_w, cols.data());
            auto result = out_cn.leftCols(cols_n);
            result.noalias() =
                ConstMapRM<T>(weight.value().data(), c_out, k_dim) * ConstMapRM<T>(cols.data(), k_dim, cols_n);
            // leftCols of a row-major matrix is strided; copy through a dense buffer.
            MatRM<T> dense = result;
            cn_to_nchw(dense.data(), cn, c_out, spatial, out.data() + n0 * c_out * spatial);
        }
    }
    if (bias.defined()) add_channel_bias(out, bias.value());

    std::vector<Var<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result<T>(std::move(out), parents, [=](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            accumulate_channel_sums(self.grad, self.parents[2]->grad_buffer());
        }
        T* dweight = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
        T* dx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
        if (direct) {
            direct_conv_backward(xn.value.data(), wn.value.data(), self.grad.data(), n_batch, c_in, h, w, c_out,
                                 kernel, geom.padding, out_h, out_w, dx, dweight);
            return;
        }
        std::vector<T> cols(static_cast<std::size_t>(k_dim) * chunk * spatial);
        MatRM<T> dy(c_out, static_cast<Eigen::Index>(chunk * spatial));
        MatRM<T> dcols;
        for (int n0 = 0; n0 < n_batch; n0 += chunk) {
            const int cn = std::min(chunk, n_batch - n0);
            const auto cols_n = static_cast<Eigen::Index>(cn * spatial);
            MapRM<T> dy_chunk(dy.data(), c_out, cols_n);
            nchw_to_cn(self.grad.data() + n0 * c_out * spatial, cn, c_out, spatial, dy_chunk.data());
            if (dweight) {
                im2col(xn.value.data() + n0 * in_plane, cn, c_in, h, w, kernel, geom.stride, geom.padding, out_h,
                       out_w, cols.data());
                MapRM<T>(dweight, c_out, k_dim).noalias() +=
                    dy_chunk * ConstMapRM<T>(cols.data(), k_dim, cols_n).transpose();
            }
            if (dx) {
                dcols.noalias() = ConstMapRM<T>(wn.value.data(), c_out, k_dim).transpose() * dy_chunk;
                col2im(dcols.data(), cn, c_in, h, w, kernel, geom.stride, geom.padding, out_h, out_w,
                       dx + n0 * in_plane);
            }
        }
    });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom,
                        int output_padding) {
    require_rank4(x.shape(), "conv_transpose2d");
    require_rank4(weight.shape(), "conv_transpose2d weight");
    const int n_batch = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int c_out = weight.shape()[1], kernel = weight.shape()[2];
    if (weight.shape()[0] != c_in) {
        throw ShapeError("conv_transpose2d: weight " + shape_to_string(weight.shape()) +
                         " incompatible with input " + shape_to_string(x.shape()));
    }
    const int out_h = (h - 1) * geom.stride - 2 * geom.padding + kernel + output_padding;
    const int out_w = (w - 1) * geom.stride - 2 * geom.padding + kernel + output_padding;
    const int k_dim = c_out * kernel * kernel;
    const std::size_t in_spatial = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(c_out) * out_h * out_w;
    const int chunk = chunk_samples(static_cast<std::size_t>(k_dim) * in_spatial, n_batch);

    Tensor<T> out({n_batch, c_out, out_h, out_w});
    {
        MatRM<T> x_cn(c_in, static_cast<Eigen::Index>(chunk * in_spatial));
        MatRM<T> cols;
        for (int n0 = 0; n0 < n_batch; n0 += chunk) {
            const int cn = std::min(chunk, n_batch - n0);
            const auto cols_n = static_cast<Eigen::Index>(cn * in_spatial);
            MapRM<T> xc(x_cn.data(), c_in, cols_n);
            nchw_to_cn(x.value().data() + n0 * c_in * in_spatial, cn, c_in, in_spatial, xc.data());
            cols.noalias() = ConstMapRM<T>(weight.value().data(), c_in, k_dim).transpose() * xc;
            col2im(cols.data(), cn, c_out, out_h, out_w, kernel, geom.stride, geom.padding, h, w,
                   out.data() + n0 * out_plane);
        }
    }
    if (bias.defined()) add_channel_bias(out, bias.value());

    std::vector<Var<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result<T>(std::move(out), parents, [=](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            accumulate_channel_sums(self.grad, self.parents[2]->grad_buffer());
        }
        MatRM<T> dcols(k_dim, static_cast<Eigen::Index>(chunk * in_spatial));
        MatRM<T> xb(c_in, static_cast<Eigen::Index>(chunk * in_spatial));
        MatRM<T> dx_cn;
        for (int n0 = 0; n0 < n_batch; n0 += chunk) {
            const int cn = std::min(chunk, n_batch - n0);
            const auto cols_n = static_cast<Eigen::Index>(cn * in_spatial);
            MapRM<T> dc(dcols.data(), k_dim, cols_n);
            im2col(self.grad.data() + n0 * out_plane, cn, c_out, out_h, out_w, kernel, geom.stride, geom.padding, h,
                   w, dc.data());
            if (wn.requires_grad) {
                MapRM<T> xc(xb.data(), c_in, cols_n);
                nchw_to_cn(xn.value.data() + n0 * c_in * in_spatial, cn, c_in, in_spatial, xc.data());
                MapRM<T>(wn.grad_buffer().data(), c_in, k_dim).noalias() += xc * dc.transpose();
            }
            if (xn.requires_grad) {
                dx_cn.noalias() = ConstMapRM<T>(wn.value.data(), c_in, k_dim) * dc;
                std::vector<T> tmp(static_cast<std::size_t>(cn) * c_in * in_spatial);
                cn_to_nchw(dx_cn.data(), cn, c_in, in_spatial, tmp.data());
                T* dx = xn.grad_buffer().data() + n0 * c_in * in_spatial;
                for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
            }
        }
    });
}

template <typename T>
Var<T> reflection_pad2d(const Var<T>& x, int pad) {
    require_rank4(x.shape(), "reflection_pad2d");
    const int n_batch = x.shape()[0], channels = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (pad >= h || pad >= w) {
        throw ShapeError("reflection_pad2d: padding " + std::to_string(pad) + " too large for " +
                         shape_to_string(x.shape()));
    }
    const int oh = h + 2 * pad, ow = w + 2 * pad;
    Tensor<T> out({n_batch, channels, oh, ow});
    const auto& in = x.value();
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < oh; ++i) {
                const int si = reflect_index(i - pad, h);
                for (int j = 0; j < ow; ++j) out.at(n, c, i, j) = in.at(n, c, si, reflect_index(j - pad, w));
            }
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (int n = 0; n < n_batch; ++n)
            for (int c = 0; c < channels; ++c)
                for (int i = 0; i < oh; ++i) {
                    const int si = reflect_index(i - pad, h);
                    for (int j = 0; j < ow; ++j) dx.at(n, c, si, reflect_index(j - pad, w)) += self.grad.at(n, c, i, j);
                }
    });
}

template <typename T>
Var<T> instance_norm2d(const Var<T>& x, double eps) {
    require_rank4(x.shape(), "instance_norm2d");
    const std::size_t planes = static_cast<std::size_t>(x.shape()[0]) * x.shape()[1];
    const std::size_t spatial = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.value().data() + p * spatial;
        double mean = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) mean += src[i];
        mean /= static_cast<double>(spatial);
        double var = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<double>(spatial);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[p] = static_cast<T>(inv);
        T* dst = out.data() + p * spatial;
        for (std::size_t i = 0; i < spatial; ++i) dst[i] = static_cast<T>((src[i] - mean) * inv);
    }
    return make_result<T>(std::move(out), {x}, [=, inv_std = std::move(inv_std)](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            const T* dy = self.grad.data() + p * spatial;
            const T* y = self.value.data() + p * spatial;
            double mean_dy = 0.0, mean_dy_y = 0.0;
            for (std::size_t i = 0; i < spatial; ++i) {
                mean_dy += dy[i];
                mean_dy_y += static_cast<double>(dy[i]) * y[i];
            }
            mean_dy /= static_cast<double>(spatial);
            mean_dy_y /= static_cast<double>(spatial);
            T* d = dx.data() + p * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                d[i] += static_cast<T>(inv_std[p] * (dy[i] - mean_dy - y[i] * mean_dy_y));
            }
        }
    });
}

template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats,
                    bool training, double momentum, double eps) {
    require_rank4(x.shape(), "batch_norm2d");
    const int n_batch = x.shape()[0], channels = x.shape()[1];
    const std::size_t spatial = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    const std::size_t count = static_cast<std::size_t>(n_batch) * spatial;
    Tensor<T> xhat(x.shape());
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        double mean = 0.0, var = 0.0;
        if (training) {
            for (int n = 0; n < n_batch; ++n) {
                const T* src = x.value().data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) mean += src[i];
            }
            mean /= static_cast<double>(count);
            for (int n = 0; n < n_batch; ++n) {
                const T* src = x.value().data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) var += (src[i] - mean) * (src[i] - mean);
            }
            var /= static_cast<double>(count);
            const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
            auto& rm = (*stats.running_mean)[static_cast<std::size_t>(c)];
            auto& rv = (*stats.running_var)[static_cast<std::size_t>(c)];
            rm = static_cast<T>((1.0 - momentum) * rm + momentum * mean);
            rv = static_cast<T>((1.0 - momentum) * rv + momentum * unbiased);
        } else {
            mean = (*stats.running_mean)[static_cast<std::size_t>(c)];
            var = (*stats.running_var)[static_cast<std::size_t>(c)];
        }
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(c)] = static_cast<T>(inv);
        const double g = gamma.value()[static_cast<std::size_t>(c)];
        const double b = beta.value()[static_cast<std::size_t>(c)];
        for (int n = 0; n < n_batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double xh = (x.value()[off + i] - mean) * inv;
                xhat[off + i] = static_cast<T>(xh);
                out[off + i] = static_cast<T>(g * xh + b);
            }
        }
    }
    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& gn = *self.parents[1];
            auto& bn = *self.parents[2];
            for (int c = 0; c < channels; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < n_batch; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) {
                        sum_dy += self.grad[off + i];
                        sum_dy_xhat += static_cast<double>(self.grad[off + i]) * xhat[off + i];
                    }
                }
                if (bn.requires_grad) bn.grad_buffer()[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
                if (gn.requires_grad) gn.grad_buffer()[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
                if (!xn.requires_grad) continue;
                const double g = gn.value[static_cast<std::size_t>(c)];
                const double inv = inv_std[static_cast<std::size_t>(c)];
                auto& dx = xn.grad_buffer();
                const double mean_dy = sum_dy / static_cast<double>(count);
                const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(count);
                for (int n = 0; n < n_batch; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) {
                        const double dy = self.grad[off + i];
                        const double d = training ? g * inv * (dy - mean_dy - xhat[off + i] * mean_dy_xhat)
                                                  : g * inv * dy;
                        dx[off + i] += static_cast<T>(d);
                    }
                }
            }
        });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const auto& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (self.value[i] > T(0)) dx[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
    Tensor<T> out(x.shape());
    const auto& in = x.value();
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : s * in[i];
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        const auto& in_v = self.parents[0]->value;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += in_v[i] > T(0) ? self.grad[i] : s * self.grad[i];
    });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const auto& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const T y = self.value[i];
            dx[i] += self.grad[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) accumulate(p->grad_buffer(), self.grad);
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(s * a.value()[i]);
    return make_result<T>(std::move(out), {a}, [=](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(s * self.grad[i]);
    });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding) {
    require_rank4(x.shape(), "max_pool2d");
    const int n_batch = x.shape()[0], channels = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int oh = conv_out_size(h, kernel, stride, padding);
    const int ow = conv_out_size(w, kernel, stride, padding);
    Tensor<T> out({n_batch, channels, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    const auto& in = x.value();
    std::size_t o = 0;
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (int ki = 0; ki < kernel; ++ki) {
                        const int ih = i * stride - padding + ki;
                        if (ih < 0 || ih >= h) continue;
                        for (int kj = 0; kj < kernel; ++kj) {
                            const int iw = j * stride - padding + kj;
                            if (iw < 0 || iw >= w) continue;
                            const std::size_t idx = ((static_cast<std::size_t>(n) * channels + c) * h + ih) * w + iw;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
    });
}

template <typename T>
Var<T> global_avg_pool2d(const Var<T>& x) {
    require_rank4(x.shape(), "global_avg_pool2d");
    const int n_batch = x.shape()[0], channels = x.shape()[1];
    const std::size_t spatial = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
    Tensor<T> out({n_batch, channels});
    for (std::size_t p = 0; p < out.size(); ++p) {
        double acc = 0.0;
        const T* src = x.value().data() + p * spatial;
        for (std::size_t i = 0; i < spatial; ++i) acc += src[i];
        out[p] = static_cast<T>(acc / static_cast<double>(spatial));
    }
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < self.grad.size(); ++p) {
            const T g = static_cast<T>(self.grad[p] / static_cast<double>(spatial));
            T* d = dx.data() + p * spatial;
            for (std::size_t i = 0; i < spatial; ++i) d[i] += g;
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    if (x.shape().size() != 2 || weight.shape().size() != 2 || weight.shape()[1] != x.shape()[1]) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(weight.shape()));
    }
    const int n = x.shape()[0], f = x.shape()[1], o = weight.shape()[0];
    Tensor<T> out({n, o});
    MapRM<T> y(out.data(), n, o);
    y.noalias() = ConstMapRM<T>(x.value().data(), n, f) * ConstMapRM<T>(weight.value().data(), o, f).transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) y(i, j) += bias.value()[static_cast<std::size_t>(j)];
    return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
        ConstMapRM<T> dy(self.grad.data(), n, o);
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        if (xn.requires_grad) {
            MapRM<T>(xn.grad_buffer().data(), n, f).noalias() += dy * ConstMapRM<T>(wn.value.data(), o, f);
        }
        if (wn.requires_grad) {
            MapRM<T>(wn.grad_buffer().data(), o, f).noalias() += dy.transpose() * ConstMapRM<T>(xn.value.data(), n, f);
        }
        if (bn.requires_grad) {
            auto& db = bn.grad_buffer();
            for (int j = 0; j < o; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) acc += dy(i, j);
                db[static_cast<std::size_t>(j)] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
Var<T> mse_to_constant(const Var<T>& x, double target) {
    const auto& in = x.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) acc += (in[i] - target) * (in[i] - target);
    const double count = static_cast<double>(in.size());
    Tensor<T> out({1}, static_cast<T>(acc / count));
    return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        const auto& v = self.parents[0]->value;
        const double g = self.grad[0] * 2.0 / count;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(g * (v[i] - target));
    });
}

template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "l1_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
    const double count = static_cast<double>(a.value().size());
    Tensor<T> out({1}, static_cast<T>(acc / count));
    return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
        auto& an = *self.parents[0];
        auto& bn = *self.parents[1];
        const double g = self.grad[0] / count;
        for (std::size_t i = 0; i < an.value.size(); ++i) {
            const T diff = an.value[i] - bn.value[i];
            const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
            if (s == T(0)) continue;
            if (an.requires_grad) an.grad_buffer()[i] += static_cast<T>(g * s);
            if (bn.requires_grad) bn.grad_buffer()[i] -= static_cast<T>(g * s);
        }
    });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (int i = 0; i < n; ++i) {
        const T* row = logits.data() + static_cast<std::size_t>(i) * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = static_cast<T>(std::exp(row[j] - mx) / z);
    }
    return out;
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2 || static_cast<std::size_t>(logits.shape()[0]) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const int n = logits.shape()[0], k = logits.shape()[1];
    Tensor<T> probs = softmax_rows(logits.value());
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw std::out_of_range("cross_entropy: label out of range");
        const T* row = logits.value().data() + static_cast<std::size_t>(i) * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        acc += std::log(z) + mx - row[y];
    }
    Tensor<T> out({1}, static_cast<T>(acc / n));
    return make_result<T>(std::move(out), {logits}, [=, probs = std::move(probs)](Node<T>& self) {
        auto& dx = self.parents[0]->grad_buffer();
        const double g = self.grad[0] / n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                const double onehot = (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
                dx[idx] += static_cast<T>(g * (probs[idx] - onehot));
            }
    });
}

#define CELLBLOOM_INSTANTIATE_OPS(T)                                                                          \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);                    \
    template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry, int);     \
    template Var<T> reflection_pad2d<T>(const Var<T>&, int);                                                 \
    template Var<T> instance_norm2d<T>(const Var<T>&, double);                                               \
    template Var<T> batch_norm2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>, bool,  \
                                    double, double);                                                         \
    template Var<T> relu<T>(const Var<T>&);                                                                  \
    template Var<T> leaky_relu<T>(const Var<T>&, double);                                                    \
    template Var<T> tanh<T>(const Var<T>&);                                                                  \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> scale<T>(const Var<T>&, double);                                                         \
    template Var<T> max_pool2d<T>(const Var<T>&, int, int, int);                                             \
    template Var<T> global_avg_pool2d<T>(const Var<T>&);                                                     \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
    template Var<T> mse_to_constant<T>(const Var<T>&, double);                                               \
    template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);                                                \
    template Var<T> cross_entropy<T>(const Var<T>&, const std::vector<int>&);                                \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);

CELLBLOOM_INSTANTIATE_OPS(float)
CELLBLOOM_INSTANTIATE_OPS(double)

}  // namespace cellbloom::nn
