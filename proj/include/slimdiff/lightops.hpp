#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/layers.hpp"
#include "slimdiff/ops.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace slimdiff {

namespace detail {

// out[b,c,:,:] = w[row*C + c] * x[b,c,:,:]
template <typename Scalar>
Tensor<Scalar> scale_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index row) {
    const Index B = x.extent(0), C = x.extent(1), hw = x.extent(2) * x.extent(3);
    Tensor<Scalar> y(x.shape());
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            Scalar s = w[row * C + c];
            const Scalar* src = x.data() + (b * C + c) * hw;
            Scalar* dst = y.data() + (b * C + c) * hw;
            for (Index i = 0; i < hw; ++i) dst[i] = s * src[i];
        }
    return y;
}

template <typename Scalar>
void scale_channels_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index row,
                             const Tensor<Scalar>& dy, Tensor<Scalar>& dx, Tensor<Scalar>& dw) {
    const Index B = x.extent(0), C = x.extent(1), hw = x.extent(2) * x.extent(3);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            Scalar s = w[row * C + c];
            const Scalar* xs = x.data() + (b * C + c) * hw;
            const Scalar* ds = dy.data() + (b * C + c) * hw;
            Scalar* dd = dx.data() + (b * C + c) * hw;
            Scalar acc = 0;
            for (Index i = 0; i < hw; ++i) {
                dd[i] += s * ds[i];
                acc += xs[i] * ds[i];
            }
            dw[row * C + c] += acc;
        }
}

}  // namespace detail

/// Direction-separable convolution: horizontal and vertical depthwise
/// branches plus their composition as the diagonal branch, per-channel
/// weighted fusion, then two 1x1 convs for channel transformation.
template <typename Scalar>
class DSCLayer {
public:
    struct Cache {
        Tensor<Scalar> x, bh, bv, bd, fused, a1, h1;
    };

    DSCLayer() = default;

    explicit DSCLayer(Index channels, CounterRng& rng, Activation act = Activation::silu)
        : channels_(channels),
          act_(act),
          dw_h_(channels, channels, 1, 3, false, channels),
          dw_v_(channels, channels, 3, 1, false, channels),
          fusion_({3, channels}, Scalar(1) / Scalar(3)),
          dfusion_({3, channels}),
          pw1_(channels, channels, 1, 1),
          pw2_(channels, channels, 1, 1) {
        init_conv(dw_h_, rng);
        init_conv(dw_v_, rng);
        pw1_.init(rng);
        pw2_.init(rng);
        dw_h_grads_ = dw_h_.grads_like();
        dw_v_grads_ = dw_v_.grads_like();
    }

    void set_activation(Activation act) { act_ = act; }
    Index channels() const { return channels_; }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* c = nullptr) const {
        if (x.rank() != 4 || x.extent(1) != channels_)
            throw std::invalid_argument("dsc_forward: channel mismatch");
        Tensor<Scalar> bh = conv2d(x, dw_h_);
        Tensor<Scalar> bv = conv2d(x, dw_v_);
        Tensor<Scalar> bd = conv2d(bh, dw_v_);  // diagonal branch: V after H
        Tensor<Scalar> fused = detail::scale_channels(bh, fusion_, 0);
        fused += detail::scale_channels(bv, fusion_, 1);
        fused += detail::scale_channels(bd, fusion_, 2);
        Tensor<Scalar> a1 = pw1_.forward(fused);
        Tensor<Scalar> h1 = activate(a1, act_);
        Tensor<Scalar> out = pw2_.forward(h1);
        if (c) *c = {x, bh, bv, bd, fused, a1, h1};
        return out;
    }

    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& dy) {
        Tensor<Scalar> d = pw2_.backward(c.h1, dy);
        d = activate_backward(c.a1, d, act_);
        Tensor<Scalar> dfused = pw1_.backward(c.fused, d);

        Tensor<Scalar> dbh(c.bh.shape()), dbv(c.bv.shape()), dbd(c.bd.shape());
        detail::scale_channels_backward(c.bh, fusion_, 0, dfused, dbh, dfusion_);
        detail::scale_channels_backward(c.bv, fusion_, 1, dfused, dbv, dfusion_);
        detail::scale_channels_backward(c.bd, fusion_, 2, dfused, dbd, dfusion_);

        // diagonal reuses dw_v, so its gradient accumulates from both uses
        dbh += conv2d_backward(c.bh, dw_v_, dbd, dw_v_grads_);
        Tensor<Scalar> dx = conv2d_backward(c.x, dw_v_, dbv, dw_v_grads_);
        dx += conv2d_backward(c.x, dw_h_, dbh, dw_h_grads_);
        return dx;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        collect_conv(out, prefix + ".dw_h", dw_h_, dw_h_grads_);
        collect_conv(out, prefix + ".dw_v", dw_v_, dw_v_grads_);
        out.push_back({prefix + ".fusion", &fusion_, &dfusion_});
        pw1_.collect(out, prefix + ".pw1");
        pw2_.collect(out, prefix + ".pw2");
    }

    Index param_count() const {
        return dw_h_.param_count() + dw_v_.param_count() + fusion_.size() + pw1_.param_count() +
               pw2_.param_count();
    }

private:
    Index channels_ = 0;
    Activation act_ = Activation::silu;
    ConvKernel<Scalar> dw_h_, dw_v_, dw_h_grads_, dw_v_grads_;
    Tensor<Scalar> fusion_, dfusion_;
    ConvLayer<Scalar> pw1_, pw2_;
};

/// Frequency-separable convolution: a depthwise kernel on the input features
/// (low frequency) and one on the box-filter residual (high frequency),
/// per-channel weighted fusion, then the same two-1x1 channel transformation.
template <typename Scalar>
class FSCLayer {
public:
    struct Cache {
        Tensor<Scalar> x, residual, low, high, fused, a1, h1;
    };

    FSCLayer() = default;

    explicit FSCLayer(Index channels, CounterRng& rng, Activation act = Activation::silu)
        : channels_(channels),
          act_(act),
          dw_low_(channels, channels, 3, 3, false, channels),
          dw_high_(channels, channels, 3, 3, false, channels),
          fusion_({2, channels}, Scalar(1) / Scalar(2)),
          dfusion_({2, channels}),
          pw1_(channels, channels, 1, 1),
          pw2_(channels, channels, 1, 1) {
        init_conv(dw_low_, rng);
        init_conv(dw_high_, rng);
        pw1_.init(rng);
        pw2_.init(rng);
        dw_low_grads_ = dw_low_.grads_like();
        dw_high_grads_ = dw_high_.grads_like();
    }

    void set_activation(Activation act) { act_ = act; }
    Index channels() const { return channels_; }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* c = nullptr) const {
        if (x.rank() != 4 || x.extent(1) != channels_)
            throw std::invalid_argument("fsc_forward: channel mismatch");
        Tensor<Scalar> residual = x - box_blur3(x);
        Tensor<Scalar> low = conv2d(x, dw_low_);
        Tensor<Scalar> high = conv2d(residual, dw_high_);
        Tensor<Scalar> fused = detail::scale_channels(low, fusion_, 0);
        fused += detail::scale_channels(high, fusion_, 1);
        Tensor<Scalar> a1 = pw1_.forward(fused);
        Tensor<Scalar> h1 = activate(a1, act_);
        Tensor<Scalar> out = pw2_.forward(h1);
        if (c) *c = {x, residual, low, high, fused, a1, h1};
        return out;
    }

    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& dy) {
        Tensor<Scalar> d = pw2_.backward(c.h1, dy);
        d = activate_backward(c.a1, d, act_);
        Tensor<Scalar> dfused = pw1_.backward(c.fused, d);

        Tensor<Scalar> dlow(c.low.shape()), dhigh(c.high.shape());
        detail::scale_channels_backward(c.low, fusion_, 0, dfused, dlow, dfusion_);
        detail::scale_channels_backward(c.high, fusion_, 1, dfused, dhigh, dfusion_);

        Tensor<Scalar> dres = conv2d_backward(c.residual, dw_high_, dhigh, dw_high_grads_);
        Tensor<Scalar> dx = conv2d_backward(c.x, dw_low_, dlow, dw_low_grads_);
        dx += dres;
        dx -= box_blur3_backward(dres);
        return dx;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        collect_conv(out, prefix + ".dw_low", dw_low_, dw_low_grads_);
        collect_conv(out, prefix + ".dw_high", dw_high_, dw_high_grads_);
        out.push_back({prefix + ".fusion", &fusion_, &dfusion_});
        pw1_.collect(out, prefix + ".pw1");
        pw2_.collect(out, prefix + ".pw2");
    }

    Index param_count() const {
        return dw_low_.param_count() + dw_high_.param_count() + fusion_.size() +
               pw1_.param_count() + pw2_.param_count();
    }

private:
    Index channels_ = 0;
    Activation act_ = Activation::silu;
    ConvKernel<Scalar> dw_low_, dw_high_, dw_low_grads_, dw_high_grads_;
    Tensor<Scalar> fusion_, dfusion_;
    ConvLayer<Scalar> pw1_, pw2_;
};

/// Query-driven global aggregation: M learnable query tokens aggregate global
/// context via cross-attention, a second cross-attention propagates it back,
/// reducing the score cost from O(N^2 d) to O(N M d).
template <typename Scalar>
class QGAMLayer {
public:
    struct Cache {
        Tensor<Scalar> f, q1, k1, v1, attn1, g, q2, k2, v2, attn2;
    };

    QGAMLayer() = default;

    // expected_tokens is the N the layer is configured for; M << N is the
    // point of the design, so M < N is enforced here rather than per call.
    QGAMLayer(Index num_queries, Index dim, Index expected_tokens, CounterRng& rng)
        : m_(num_queries),
          d_(dim),
          queries_({num_queries, dim}),
          dqueries_({num_queries, dim}),
          w_q_({dim, dim}), w_k_({dim, dim}), w_v_({dim, dim}),
          w2_q_({dim, dim}), w2_k_({dim, dim}), w2_v_({dim, dim}),
          dw_q_({dim, dim}), dw_k_({dim, dim}), dw_v_({dim, dim}),
          dw2_q_({dim, dim}), dw2_k_({dim, dim}), dw2_v_({dim, dim}) {
        if (num_queries >= expected_tokens)
            throw std::invalid_argument("QGAMLayer: requires M < N (queries vs tokens)");
        init_matrix(queries_, dim, rng);
        init_matrix(w_q_, dim, rng);
        init_matrix(w_k_, dim, rng);
        init_matrix(w_v_, dim, rng);
        init_matrix(w2_q_, dim, rng);
        init_matrix(w2_k_, dim, rng);
        init_matrix(w2_v_, dim, rng);
    }

    Index num_queries() const { return m_; }
    Index dim() const { return d_; }

    // F_in is token-major (N, d), N >= 1.
    Tensor<Scalar> forward(const Tensor<Scalar>& f_in, Cache* cache = nullptr) const {
        if (f_in.rank() != 2 || f_in.extent(1) != d_)
            throw std::invalid_argument("qgam_forward: expected (N," + std::to_string(d_) + ")");
        if (f_in.extent(0) < 1) throw std::invalid_argument("qgam_forward: N >= 1 required");

        const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(d_));
        Tensor<Scalar> q1 = matmul(queries_, w_q_);   // (M,d)
        Tensor<Scalar> k1 = matmul(f_in, w_k_);       // (N,d)
        Tensor<Scalar> v1 = matmul(f_in, w_v_);       // (N,d)
        Tensor<Scalar> s1 = matmul_nt(q1, k1);        // (M,N)
        s1 *= inv_sqrt_d;
        Tensor<Scalar> attn1 = softmax(s1, 1);
        Tensor<Scalar> g = matmul(attn1, v1);         // (M,d)

        Tensor<Scalar> q2 = matmul(f_in, w2_q_);      // (N,d)
        Tensor<Scalar> k2 = matmul(g, w2_k_);         // (M,d)
        Tensor<Scalar> v2 = matmul(g, w2_v_);         // (M,d)
        Tensor<Scalar> s2 = matmul_nt(q2, k2);        // (N,M)
        s2 *= inv_sqrt_d;
        Tensor<Scalar> attn2 = softmax(s2, 1);
        Tensor<Scalar> out = matmul(attn2, v2);       // (N,d)

        if (cache) *cache = {f_in, q1, k1, v1, attn1, g, q2, k2, v2, attn2};
        return out;
    }

    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& d_out) {
        const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(d_));

        Tensor<Scalar> dattn2 = matmul_nt(d_out, c.v2);
        Tensor<Scalar> dv2 = matmul_tn(c.attn2, d_out);
        Tensor<Scalar> ds2 = softmax_backward(c.attn2, dattn2, 1);
        ds2 *= inv_sqrt_d;
        Tensor<Scalar> dq2 = matmul(ds2, c.k2);
        Tensor<Scalar> dk2 = matmul_tn(ds2, c.q2);

        Tensor<Scalar> df = matmul_nt(dq2, w2_q_);
        dw2_q_ += matmul_tn(c.f, dq2);
        Tensor<Scalar> dg = matmul_nt(dk2, w2_k_);
        dw2_k_ += matmul_tn(c.g, dk2);
        dg += matmul_nt(dv2, w2_v_);
        dw2_v_ += matmul_tn(c.g, dv2);

        Tensor<Scalar> dattn1 = matmul_nt(dg, c.v1);
        Tensor<Scalar> dv1 = matmul_tn(c.attn1, dg);
        Tensor<Scalar> ds1 = softmax_backward(c.attn1, dattn1, 1);
        ds1 *= inv_sqrt_d;
        Tensor<Scalar> dq1 = matmul(ds1, c.k1);
        Tensor<Scalar> dk1 = matmul_tn(ds1, c.q1);

        dqueries_ += matmul_nt(dq1, w_q_);
        dw_q_ += matmul_tn(queries_, dq1);
        df += matmul_nt(dk1, w_k_);
        dw_k_ += matmul_tn(c.f, dk1);
        df += matmul_nt(dv1, w_v_);
        dw_v_ += matmul_tn(c.f, dv1);
        return df;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        out.push_back({prefix + ".queries", &queries_, &dqueries_});
        out.push_back({prefix + ".w_q", &w_q_, &dw_q_});
        out.push_back({prefix + ".w_k", &w_k_, &dw_k_});
        out.push_back({prefix + ".w_v", &w_v_, &dw_v_});
        out.push_back({prefix + ".w2_q", &w2_q_, &dw2_q_});
        out.push_back({prefix + ".w2_k", &w2_k_, &dw2_k_});
        out.push_back({prefix + ".w2_v", &w2_v_, &dw2_v_});
    }

    Index param_count() const { return m_ * d_ + 6 * d_ * d_; }

private:
    Index m_ = 0, d_ = 0;
    Tensor<Scalar> queries_, dqueries_;
    Tensor<Scalar> w_q_, w_k_, w_v_, w2_q_, w2_k_, w2_v_;
    Tensor<Scalar> dw_q_, dw_k_, dw_v_, dw2_q_, dw2_k_, dw2_v_;
};

/// Single-head global self-attention, the standard counterpart QGAM replaces.
template <typename Scalar>
class SelfAttention {
public:
    struct Cache {
        Tensor<Scalar> f, q, k, v, attn, mixed;
    };

    SelfAttention() = default;

    SelfAttention(Index dim, CounterRng& rng)
        : d_(dim),
          w_q_({dim, dim}), w_k_({dim, dim}), w_v_({dim, dim}), w_o_({dim, dim}),
          dw_q_({dim, dim}), dw_k_({dim, dim}), dw_v_({dim, dim}), dw_o_({dim, dim}) {
        init_matrix(w_q_, dim, rng);
        init_matrix(w_k_, dim, rng);
        init_matrix(w_v_, dim, rng);
        init_matrix(w_o_, dim, rng);
    }

    Index dim() const { return d_; }

    Tensor<Scalar> forward(const Tensor<Scalar>& f_in, Cache* cache = nullptr) const {
        const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(d_));
        Tensor<Scalar> q = matmul(f_in, w_q_);
        Tensor<Scalar> k = matmul(f_in, w_k_);
        Tensor<Scalar> v = matmul(f_in, w_v_);
        Tensor<Scalar> s = matmul_nt(q, k);
        s *= inv_sqrt_d;
        Tensor<Scalar> attn = softmax(s, 1);
        Tensor<Scalar> mixed = matmul(attn, v);
        Tensor<Scalar> out = matmul(mixed, w_o_);
        if (cache) *cache = {f_in, q, k, v, attn, mixed};
        return out;
    }

    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& d_out) {
        const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(d_));
        Tensor<Scalar> dmixed = matmul_nt(d_out, w_o_);
        dw_o_ += matmul_tn(c.mixed, d_out);
        Tensor<Scalar> dattn = matmul_nt(dmixed, c.v);
        Tensor<Scalar> dv = matmul_tn(c.attn, dmixed);
        Tensor<Scalar> ds = softmax_backward(c.attn, dattn, 1);
        ds *= inv_sqrt_d;
        Tensor<Scalar> dq = matmul(ds, c.k);
        Tensor<Scalar> dk = matmul_tn(ds, c.q);
        Tensor<Scalar> df = matmul_nt(dq, w_q_);
        dw_q_ += matmul_tn(c.f, dq);
        df += matmul_nt(dk, w_k_);
        dw_k_ += matmul_tn(c.f, dk);
        df += matmul_nt(dv, w_v_);
        dw_v_ += matmul_tn(c.f, dv);
        return df;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        out.push_back({prefix + ".w_q", &w_q_, &dw_q_});
        out.push_back({prefix + ".w_k", &w_k_, &dw_k_});
        out.push_back({prefix + ".w_v", &w_v_, &dw_v_});
        out.push_back({prefix + ".w_o", &w_o_, &dw_o_});
    }

    Index param_count() const { return 4 * d_ * d_; }

private:
    Index d_ = 0;
    Tensor<Scalar> w_q_, w_k_, w_v_, w_o_;
    Tensor<Scalar> dw_q_, dw_k_, dw_v_, dw_o_;
};

// ---------------------------------------------------------------------------
// Cost accounting. MACs count weight multiplies only (bias adds excluded).
// For the attention kinds the figure is the attention-score cost, the term
// whose asymptotic order the query-token design changes.

enum class OpKind { qgam, self_attention, dsc, fsc, conv3x3 };

inline OpKind op_kind_from_string(const std::string& s) {
    if (s == "qgam") return OpKind::qgam;
    if (s == "self_attention") return OpKind::self_attention;
    if (s == "dsc") return OpKind::dsc;
    if (s == "fsc") return OpKind::fsc;
    if (s == "conv3x3") return OpKind::conv3x3;
    throw std::invalid_argument("unknown op kind: " + s);
}

inline std::int64_t conv_macs(std::int64_t c_in, std::int64_t c_out, std::int64_t kh,
                              std::int64_t kw, std::int64_t out_h, std::int64_t out_w,
                              std::int64_t groups = 1) {
    return (c_in / groups) * c_out * kh * kw * out_h * out_w;
}

inline std::int64_t count_macs(OpKind op, std::int64_t n, std::int64_t m, std::int64_t d,
                               std::int64_t c, std::int64_t h, std::int64_t w) {
    if (n < 0 || m < 0 || d < 0 || c < 0 || h < 0 || w < 0)
        throw std::invalid_argument("count_macs: negative dimension");
    switch (op) {
        case OpKind::qgam:
            return 2 * n * m * d;  // two cross-attention score products
        case OpKind::self_attention:
            return n * n * d;
        case OpKind::conv3x3:
            return conv_macs(c, c, 3, 3, h, w);
        case OpKind::dsc:
            // three depthwise taps (1x3, 3x1, composed) + fusion + two 1x1
            return 9 * c * h * w + 3 * c * h * w + 2 * c * c * h * w;
        case OpKind::fsc:
            // box blur + two depthwise 3x3 + fusion + two 1x1
            return 9 * c * h * w + 18 * c * h * w + 2 * c * h * w + 2 * c * c * h * w;
    }
    throw std::logic_error("count_macs: unreachable");
}

// Learnable parameter counts at equal channel width (biases only on the
// two pointwise convs, matching the layer definitions above).
inline std::int64_t conv3x3_param_count(std::int64_t c) { return 9 * c * c + c; }
inline std::int64_t dsc_param_count(std::int64_t c) { return 3 * c + 3 * c + 3 * c + 2 * (c * c + c); }
inline std::int64_t fsc_param_count(std::int64_t c) { return 9 * c + 9 * c + 2 * c + 2 * (c * c + c); }

}  // namespace slimdiff
