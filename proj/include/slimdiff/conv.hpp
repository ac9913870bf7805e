#pragma once

#include "slimdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slimdiff {

/// Cross-correlation kernel (deep-learning convention, no kernel flip).
/// weights shape: (C_out, C_in_per_group, kH, kW); bias shape: (C_out).
template <typename Scalar>
struct ConvKernel {
    Tensor<Scalar> weights;
    Tensor<Scalar> bias;  // empty when has_bias == false
    bool has_bias = false;
    Index groups = 1;
    Index stride = 1;
    Index pad_h = 0;
    Index pad_w = 0;

    ConvKernel() = default;

    ConvKernel(Index c_out, Index c_in, Index kh, Index kw, bool with_bias = true,
               Index groups_ = 1, Index stride_ = 1, Index ph = -1, Index pw = -1)
        : has_bias(with_bias), groups(groups_), stride(stride_) {
        if (groups_ <= 0 || c_in % groups_ != 0 || c_out % groups_ != 0)
            throw std::invalid_argument("conv: groups must divide C_in and C_out");
        weights = Tensor<Scalar>({c_out, c_in / groups_, kh, kw});
        if (with_bias) bias = Tensor<Scalar>({c_out});
        pad_h = ph >= 0 ? ph : (kh - 1) / 2;  // "same" padding by default for odd kernels
        pad_w = pw >= 0 ? pw : (kw - 1) / 2;
    }

    Index c_out() const { return weights.extent(0); }
    Index c_in_per_group() const { return weights.extent(1); }
    Index c_in() const { return weights.extent(1) * groups; }
    Index kh() const { return weights.extent(2); }
    Index kw() const { return weights.extent(3); }

    bool is_depthwise() const { return c_in_per_group() == 1 && groups == c_out(); }

    Index param_count() const { return weights.size() + (has_bias ? bias.size() : 0); }

    ConvKernel grads_like() const {
        ConvKernel g = *this;
        g.weights = Tensor<Scalar>(weights.shape());
        if (has_bias) g.bias = Tensor<Scalar>(bias.shape());
        return g;
    }

    void check_input(const Tensor<Scalar>& x) const {
        if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be 4-d (B,C,H,W)");
        if (x.extent(1) != c_in())
            throw std::invalid_argument("conv2d: input has " + std::to_string(x.extent(1)) +
                                        " channels, kernel expects " + std::to_string(c_in()));
    }
};

template <typename Scalar>
inline Index conv_out_extent(Index in, Index k, Index pad, Index stride) {
    Index out = (in + 2 * pad - k) / stride + 1;
    if (out <= 0) throw std::invalid_argument("conv2d: non-positive output extent");
    return out;
}

namespace detail {

// Gathers conv patches for one (batch, group) slice into a
// (C_in_pg*kH*kW) x (outH*outW) row-major matrix.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, Index b, Index g, const ConvKernel<Scalar>& k,
            Index out_h, Index out_w, Scalar* col) {
    const Index cin_pg = k.c_in_per_group();
    const Index H = x.extent(2), W = x.extent(3);
    const Index cols = out_h * out_w;
    for (Index c = 0; c < cin_pg; ++c) {
        Index ch = g * cin_pg + c;
        for (Index ky = 0; ky < k.kh(); ++ky) {
            for (Index kx = 0; kx < k.kw(); ++kx) {
                Scalar* row = col + ((c * k.kh() + ky) * k.kw() + kx) * cols;
                for (Index oy = 0; oy < out_h; ++oy) {
                    Index iy = oy * k.stride + ky - k.pad_h;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + oy * out_w, row + (oy + 1) * out_w, Scalar(0));
                        continue;
                    }
                    for (Index ox = 0; ox < out_w; ++ox) {
                        Index ix = ox * k.stride + kx - k.pad_w;
                        row[oy * out_w + ox] = (ix >= 0 && ix < W) ? x.at4(b, ch, iy, ix) : Scalar(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch matrix back onto the input slice (transpose of im2col).
template <typename Scalar>
void col2im_add(Tensor<Scalar>& dx, Index b, Index g, const ConvKernel<Scalar>& k,
                Index out_h, Index out_w, const Scalar* col) {
    const Index cin_pg = k.c_in_per_group();
    const Index H = dx.extent(2), W = dx.extent(3);
    const Index cols = out_h * out_w;
    for (Index c = 0; c < cin_pg; ++c) {
        Index ch = g * cin_pg + c;
        for (Index ky = 0; ky < k.kh(); ++ky) {
            for (Index kx = 0; kx < k.kw(); ++kx) {
                const Scalar* row = col + ((c * k.kh() + ky) * k.kw() + kx) * cols;
                for (Index oy = 0; oy < out_h; ++oy) {
                    Index iy = oy * k.stride + ky - k.pad_h;
                    if (iy < 0 || iy >= H) continue;
                    for (Index ox = 0; ox < out_w; ++ox) {
                        Index ix = ox * k.stride + kx - k.pad_w;
                        if (ix >= 0 && ix < W) dx.at4(b, ch, iy, ix) += row[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-d cross-correlation. Pure function of (input, kernel).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
    k.check_input(x);
    assert_finite(x, "conv2d input");
    const Index B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const Index out_h = conv_out_extent<Scalar>(H, k.kh(), k.pad_h, k.stride);
    const Index out_w = conv_out_extent<Scalar>(W, k.kw(), k.pad_w, k.stride);
    const Index cout_pg = k.c_out() / k.groups;
    const Index patch = k.c_in_per_group() * k.kh() * k.kw();
    const Index cols = out_h * out_w;

    Tensor<Scalar> y({B, k.c_out(), out_h, out_w});

    if (k.is_depthwise()) {
        // direct loop; the GEMM would be a degenerate 1-row product per channel
        for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < k.c_out(); ++c)
                for (Index oy = 0; oy < out_h; ++oy)
                    for (Index ox = 0; ox < out_w; ++ox) {
                        Scalar acc = k.has_bias ? k.bias[c] : Scalar(0);
                        for (Index ky = 0; ky < k.kh(); ++ky) {
                            Index iy = oy * k.stride + ky - k.pad_h;
                            if (iy < 0 || iy >= H) continue;
                            for (Index kx = 0; kx < k.kw(); ++kx) {
                                Index ix = ox * k.stride + kx - k.pad_w;
                                if (ix < 0 || ix >= W) continue;
                                acc += k.weights.at4(c, 0, ky, kx) * x.at4(b, c, iy, ix);
                            }
                        }
                        y.at4(b, c, oy, ox) = acc;
                    }
        assert_finite(y, "conv2d output");
        return y;
    }

    Tensor<Scalar> col({patch, cols});
    for (Index b = 0; b < B; ++b) {
        for (Index g = 0; g < k.groups; ++g) {
            detail::im2col(x, b, g, k, out_h, out_w, col.data());
            ConstMatMap<Scalar> wmat(k.weights.data() + g * cout_pg * patch, cout_pg, patch);
            ConstMatMap<Scalar> cmat(col.data(), patch, cols);
            MatMap<Scalar> ymat(y.data() + (b * k.c_out() + g * cout_pg) * cols, cout_pg, cols);
            ymat.noalias() = wmat * cmat;
        }
        if (k.has_bias)
            for (Index c = 0; c < k.c_out(); ++c) {
                Scalar* row = y.data() + (b * k.c_out() + c) * cols;
                for (Index i = 0; i < cols; ++i) row[i] += k.bias[c];
            }
    }
    assert_finite(y, "conv2d output");
    return y;
}

/// Backward pass. Accumulates parameter gradients into `grads` and returns dL/dx.
template <typename Scalar>
Tensor<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                               const Tensor<Scalar>& dy, ConvKernel<Scalar>& grads) {
    k.check_input(x);
    const Index B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const Index out_h = dy.extent(2), out_w = dy.extent(3);
    const Index cout_pg = k.c_out() / k.groups;
    const Index patch = k.c_in_per_group() * k.kh() * k.kw();
    const Index cols = out_h * out_w;

    Tensor<Scalar> dx(x.shape());

    if (k.has_bias)
        for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < k.c_out(); ++c) {
                const Scalar* row = dy.data() + (b * k.c_out() + c) * cols;
                Scalar acc = 0;
                for (Index i = 0; i < cols; ++i) acc += row[i];
                grads.bias[c] += acc;
            }

    if (k.is_depthwise()) {
        for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < k.c_out(); ++c)
                for (Index oy = 0; oy < out_h; ++oy)
                    for (Index ox = 0; ox < out_w; ++ox) {
                        Scalar g = dy.at4(b, c, oy, ox);
                        for (Index ky = 0; ky < k.kh(); ++ky) {
                            Index iy = oy * k.stride + ky - k.pad_h;
                            if (iy < 0 || iy >= H) continue;
                            for (Index kx = 0; kx < k.kw(); ++kx) {
                                Index ix = ox * k.stride + kx - k.pad_w;
                                if (ix < 0 || ix >= W) continue;
                                grads.weights.at4(c, 0, ky, kx) += g * x.at4(b, c, iy, ix);
                                dx.at4(b, c, iy, ix) += g * k.weights.at4(c, 0, ky, kx);
                            }
                        }
                    }
        return dx;
    }

    Tensor<Scalar> col({patch, cols});
    Tensor<Scalar> dcol({patch, cols});
    for (Index b = 0; b < B; ++b) {
        for (Index g = 0; g < k.groups; ++g) {
            detail::im2col(x, b, g, k, out_h, out_w, col.data());
            ConstMatMap<Scalar> cmat(col.data(), patch, cols);
            ConstMatMap<Scalar> dymat(dy.data() + (b * k.c_out() + g * cout_pg) * cols, cout_pg, cols);
            MatMap<Scalar> dwmat(grads.weights.data() + g * cout_pg * patch, cout_pg, patch);
            dwmat.noalias() += dymat * cmat.transpose();

            ConstMatMap<Scalar> wmat(k.weights.data() + g * cout_pg * patch, cout_pg, patch);
            MatMap<Scalar> dcmat(dcol.data(), patch, cols);
            dcmat.noalias() = wmat.transpose() * dymat;
            detail::col2im_add(dx, b, g, k, out_h, out_w, dcol.data());
        }
    }
    return dx;
}

/// 3x3 box blur normalized by the in-bounds tap count, so constants map to
/// themselves exactly, edges included.
template <typename Scalar>
Tensor<Scalar> box_blur3(const Tensor<Scalar>& x) {
    if (x.rank() != 4) throw std::invalid_argument("box_blur3: input must be 4-d");
    const Index B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<Scalar> y(x.shape());
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    Scalar acc = 0;
                    int n = 0;
                    for (Index di = -1; di <= 1; ++di)
                        for (Index dj = -1; dj <= 1; ++dj) {
                            Index ii = i + di, jj = j + dj;
                            if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                            acc += x.at4(b, c, ii, jj);
                            ++n;
                        }
                    y.at4(b, c, i, j) = acc / Scalar(n);
                }
    return y;
}

template <typename Scalar>
Tensor<Scalar> box_blur3_backward(const Tensor<Scalar>& dy) {
    const Index B = dy.extent(0), C = dy.extent(1), H = dy.extent(2), W = dy.extent(3);
    Tensor<Scalar> dx(dy.shape());
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    int n = 0;
                    for (Index di = -1; di <= 1; ++di)
                        for (Index dj = -1; dj <= 1; ++dj) {
                            Index ii = i + di, jj = j + dj;
                            if (ii >= 0 && ii < H && jj >= 0 && jj < W) ++n;
                        }
                    Scalar g = dy.at4(b, c, i, j) / Scalar(n);
                    for (Index di = -1; di <= 1; ++di)
                        for (Index dj = -1; dj <= 1; ++dj) {
                            Index ii = i + di, jj = j + dj;
                            if (ii >= 0 && ii < H && jj >= 0 && jj < W) dx.at4(b, c, ii, jj) += g;
                        }
                }
    return dx;
}

template <typename Scalar>
Tensor<Scalar> nearest_upsample2(const Tensor<Scalar>& x) {
    const Index B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<Scalar> y({B, C, 2 * H, 2 * W});
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    Scalar v = x.at4(b, c, i, j);
                    y.at4(b, c, 2 * i, 2 * j) = v;
                    y.at4(b, c, 2 * i, 2 * j + 1) = v;
                    y.at4(b, c, 2 * i + 1, 2 * j) = v;
                    y.at4(b, c, 2 * i + 1, 2 * j + 1) = v;
                }
    return y;
}

template <typename Scalar>
Tensor<Scalar> nearest_upsample2_backward(const Tensor<Scalar>& dy) {
    const Index B = dy.extent(0), C = dy.extent(1), H = dy.extent(2) / 2, W = dy.extent(3) / 2;
    Tensor<Scalar> dx({B, C, H, W});
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j)
                    dx.at4(b, c, i, j) = dy.at4(b, c, 2 * i, 2 * j) + dy.at4(b, c, 2 * i, 2 * j + 1) +
                                         dy.at4(b, c, 2 * i + 1, 2 * j) +
                                         dy.at4(b, c, 2 * i + 1, 2 * j + 1);
    return dx;
}

template <typename Scalar>
Tensor<Scalar> avg_pool(const Tensor<Scalar>& x, Index factor) {
    const Index B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (H % factor != 0 || W % factor != 0) throw std::invalid_argument("avg_pool: size not divisible");
    Tensor<Scalar> y({B, C, H / factor, W / factor});
    Scalar inv = Scalar(1) / Scalar(factor * factor);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H / factor; ++i)
                for (Index j = 0; j < W / factor; ++j) {
                    Scalar acc = 0;
                    for (Index di = 0; di < factor; ++di)
                        for (Index dj = 0; dj < factor; ++dj)
                            acc += x.at4(b, c, i * factor + di, j * factor + dj);
                    y.at4(b, c, i, j) = acc * inv;
                }
    return y;
}

/// Separable Gaussian blur with radius ceil(3*sigma) and clamped borders.
template <typename Scalar>
Tensor<Scalar> gaussian_blur(const Tensor<Scalar>& x, double sigma) {
    if (sigma <= 0) return x;
    Index radius = static_cast<Index>(std::ceil(3.0 * sigma));
    std::vector<Scalar> kern(static_cast<size_t>(2 * radius + 1));
    Scalar norm = 0;
    for (Index i = -radius; i <= radius; ++i) {
        Scalar v = static_cast<Scalar>(std::exp(-0.5 * (double(i) * double(i)) / (sigma * sigma)));
        kern[static_cast<size_t>(i + radius)] = v;
        norm += v;
    }
    for (auto& v : kern) v /= norm;

    const Index B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<Scalar> tmp(x.shape()), y(x.shape());
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    Scalar acc = 0;
                    for (Index t = -radius; t <= radius; ++t) {
                        Index jj = std::clamp<Index>(j + t, 0, W - 1);
                        acc += kern[static_cast<size_t>(t + radius)] * x.at4(b, c, i, jj);
                    }
                    tmp.at4(b, c, i, j) = acc;
                }
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    Scalar acc = 0;
                    for (Index t = -radius; t <= radius; ++t) {
                        Index ii = std::clamp<Index>(i + t, 0, H - 1);
                        acc += kern[static_cast<size_t>(t + radius)] * tmp.at4(b, c, ii, j);
                    }
                    y.at4(b, c, i, j) = acc;
                }
        }
    return y;
}

namespace detail {

template <typename Scalar>
Scalar cubic_weight(Scalar t) {
    // Catmull-Rom (a = -0.5)
    const Scalar a = Scalar(-0.5);
    Scalar at = std::abs(t);
    if (at <= 1) return (a + 2) * at * at * at - (a + 3) * at * at + 1;
    if (at < 2) return a * at * at * at - 5 * a * at * at + 8 * a * at - 4 * a;
    return 0;
}

}  // namespace detail

/// Bicubic resampling with half-pixel centers and clamped borders.
template <typename Scalar>
Tensor<Scalar> bicubic_resize(const Tensor<Scalar>& x, Index out_h, Index out_w) {
    const Index B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<Scalar> y({B, C, out_h, out_w});
    const Scalar sy = Scalar(H) / Scalar(out_h);
    const Scalar sx = Scalar(W) / Scalar(out_w);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < out_h; ++i) {
                Scalar fy = (Scalar(i) + Scalar(0.5)) * sy - Scalar(0.5);
                Index iy = static_cast<Index>(std::floor(fy));
                for (Index j = 0; j < out_w; ++j) {
                    Scalar fx = (Scalar(j) + Scalar(0.5)) * sx - Scalar(0.5);
                    Index ix = static_cast<Index>(std::floor(fx));
                    Scalar acc = 0;
                    for (Index dy = -1; dy <= 2; ++dy) {
                        Index yy = std::clamp<Index>(iy + dy, 0, H - 1);
                        Scalar wy = detail::cubic_weight(fy - Scalar(iy + dy));
                        for (Index dx = -1; dx <= 2; ++dx) {
                            Index xx = std::clamp<Index>(ix + dx, 0, W - 1);
                            acc += wy * detail::cubic_weight(fx - Scalar(ix + dx)) * x.at4(b, c, yy, xx);
                        }
                    }
                    y.at4(b, c, i, j) = acc;
                }
            }
    return y;
}

}  // namespace slimdiff
