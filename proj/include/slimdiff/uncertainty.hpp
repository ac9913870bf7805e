#pragma once

#include "slimdiff/layers.hpp"
#include "slimdiff/ops.hpp"
#include "slimdiff/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace slimdiff {

/// Paired mean latent and per-element log-variance (s = ln z_var). The
/// exponential parameterization keeps z_var positive by construction.
template <typename Scalar>
struct UncertaintyOutput {
    Tensor<Scalar> z_mean;
    Tensor<Scalar> s;

    Tensor<Scalar> z_var() const {
        return map(s, [](Scalar v) { return std::exp(v); });
    }
};

/// z = z_mean + eps * exp(s/2)
template <typename Scalar>
Tensor<Scalar> sample_observation(const Tensor<Scalar>& z_mean, const Tensor<Scalar>& s,
                                  const Tensor<Scalar>& eps) {
    if (!z_mean.same_shape(s) || !z_mean.same_shape(eps))
        throw std::invalid_argument("sample_observation: shape mismatch");
    Tensor<Scalar> out = z_mean;
    for (Index i = 0; i < out.size(); ++i) out[i] += eps[i] * std::exp(s[i] / 2);
    return out;
}

/// 1/(2N) sum_i [ exp(-s_i) (z_gt_i - z_mean_i)^2 + 3 s_i ]
template <typename Scalar>
Scalar uncertainty_loss(const Tensor<Scalar>& z_gt, const UncertaintyOutput<Scalar>& out) {
    if (!z_gt.same_shape(out.z_mean) || !z_gt.same_shape(out.s))
        throw std::invalid_argument("uncertainty_loss: shape mismatch");
    assert_finite(z_gt, "uncertainty_loss z_gt");
    assert_finite(out.z_mean, "uncertainty_loss z_mean");
    assert_finite(out.s, "uncertainty_loss s");
    const Index n = z_gt.size();
    Scalar acc = 0;
    for (Index i = 0; i < n; ++i) {
        Scalar d = z_gt[i] - out.z_mean[i];
        acc += std::exp(-out.s[i]) * d * d + 3 * out.s[i];
    }
    return acc / (2 * Scalar(n));
}

template <typename Scalar>
struct UncertaintyLossGrads {
    Scalar value;
    Tensor<Scalar> d_z_mean;
    Tensor<Scalar> d_s;
};

template <typename Scalar>
UncertaintyLossGrads<Scalar> uncertainty_loss_with_grad(const Tensor<Scalar>& z_gt,
                                                        const UncertaintyOutput<Scalar>& out) {
    UncertaintyLossGrads<Scalar> r{uncertainty_loss(z_gt, out), Tensor<Scalar>(z_gt.shape()),
                                   Tensor<Scalar>(z_gt.shape())};
    const Index n = z_gt.size();
    for (Index i = 0; i < n; ++i) {
        Scalar d = z_gt[i] - out.z_mean[i];
        Scalar e = std::exp(-out.s[i]);
        r.d_z_mean[i] = -e * d / Scalar(n);
        r.d_s[i] = (-e * d * d + 3) / (2 * Scalar(n));
    }
    return r;
}

/// Spatial map of target noise levels, entries in (0,1); conditioning uses
/// the mean reduction.
template <typename Scalar>
struct AlphaTargetMap {
    Tensor<Scalar> values;

    Scalar scalar_reduction() const { return values.mean(); }

    void validate() const {
        for (Index i = 0; i < values.size(); ++i)
            if (!(values[i] > Scalar(0) && values[i] < Scalar(1)))
                throw std::runtime_error("AlphaTargetMap: entry outside (0,1)");
    }
};

/// abar_target = sigma_gt^2 / (sigma_gt^2 + z_var), element-wise.
template <typename Scalar>
AlphaTargetMap<Scalar> analytic_alpha_target(const Tensor<Scalar>& z_var, Scalar sigma_gt_sq) {
    if (!(sigma_gt_sq > 0)) throw std::invalid_argument("analytic_alpha_target: sigma_gt^2 <= 0");
    AlphaTargetMap<Scalar> m{Tensor<Scalar>(z_var.shape())};
    for (Index i = 0; i < z_var.size(); ++i) {
        if (!(z_var[i] > 0)) throw std::invalid_argument("analytic_alpha_target: z_var <= 0");
        m.values[i] = sigma_gt_sq / (sigma_gt_sq + z_var[i]);
    }
    return m;
}

/// Sum of squared forward differences along height and width. The map may be
/// (H,W) or any 4-d tensor whose trailing axes are (H,W).
template <typename Scalar>
Scalar tv_loss(const Tensor<Scalar>& m) {
    if (m.rank() < 2) throw std::invalid_argument("tv_loss: need at least 2-d");
    const Index W = m.extent(m.rank() - 1);
    const Index H = m.extent(m.rank() - 2);
    if (H < 2 || W < 2) throw std::invalid_argument("tv_loss: map smaller than 2x2");
    const Index planes = m.size() / (H * W);
    Scalar acc = 0;
    for (Index p = 0; p < planes; ++p) {
        const Scalar* v = m.data() + p * H * W;
        for (Index i = 0; i + 1 < H; ++i)
            for (Index j = 0; j < W; ++j) {
                Scalar d = v[(i + 1) * W + j] - v[i * W + j];
                acc += d * d;
            }
        for (Index i = 0; i < H; ++i)
            for (Index j = 0; j + 1 < W; ++j) {
                Scalar d = v[i * W + j + 1] - v[i * W + j];
                acc += d * d;
            }
    }
    return acc;
}

template <typename Scalar>
Scalar tv_loss(const AlphaTargetMap<Scalar>& m) {
    return tv_loss(m.values);
}

template <typename Scalar>
Tensor<Scalar> tv_loss_backward(const Tensor<Scalar>& m) {
    const Index W = m.extent(m.rank() - 1);
    const Index H = m.extent(m.rank() - 2);
    const Index planes = m.size() / (H * W);
    Tensor<Scalar> g(m.shape());
    for (Index p = 0; p < planes; ++p) {
        const Scalar* v = m.data() + p * H * W;
        Scalar* gv = g.data() + p * H * W;
        for (Index i = 0; i + 1 < H; ++i)
            for (Index j = 0; j < W; ++j) {
                Scalar d = v[(i + 1) * W + j] - v[i * W + j];
                gv[(i + 1) * W + j] += 2 * d;
                gv[i * W + j] -= 2 * d;
            }
        for (Index i = 0; i < H; ++i)
            for (Index j = 0; j + 1 < W; ++j) {
                Scalar d = v[i * W + j + 1] - v[i * W + j];
                gv[i * W + j + 1] += 2 * d;
                gv[i * W + j] -= 2 * d;
            }
    }
    return g;
}

/// Noise-level predictor: two depthwise-separable conv stages, a pointwise
/// mix down to one channel, then a sigmoid. Consumes the reference latent and
/// the variance map channel-concatenated.
template <typename Scalar>
class PredictorNet {
public:
    struct Cache {
        Tensor<Scalar> x, d1, a1, h1, d2, a2, h2, out;
    };

    PredictorNet() = default;

    PredictorNet(Index in_channels, Index hidden, CounterRng& rng)
        : in_channels_(in_channels),
          dw1_(2 * in_channels, 2 * in_channels, 3, 3, false, 2 * in_channels),
          pw1_(hidden, 2 * in_channels, 1, 1),
          dw2_(hidden, hidden, 3, 3, false, hidden),
          pw2_(hidden, hidden, 1, 1),
          mix_(1, hidden, 1, 1) {
        dw1_.init(rng);
        pw1_.init(rng);
        dw2_.init(rng);
        pw2_.init(rng);
        // zero final layer: the prior over abar_target starts flat at 0.5
        mix_.kernel.weights.array().setZero();
        if (mix_.kernel.has_bias) mix_.kernel.bias.array().setZero();
    }

    AlphaTargetMap<Scalar> forward(const Tensor<Scalar>& z_ref, const Tensor<Scalar>& z_var,
                                   Cache* c = nullptr) const {
        if (!z_ref.same_shape(z_var))
            throw std::invalid_argument("predictor_forward: z_ref/z_var shape mismatch");
        Tensor<Scalar> x = concat_channels(z_ref, z_var);
        Tensor<Scalar> d1 = dw1_.forward(x);
        Tensor<Scalar> a1 = pw1_.forward(d1);
        Tensor<Scalar> h1 = activate(a1, Activation::silu);
        Tensor<Scalar> d2 = dw2_.forward(h1);
        Tensor<Scalar> a2 = pw2_.forward(d2);
        Tensor<Scalar> h2 = activate(a2, Activation::silu);
        Tensor<Scalar> out = sigmoid(mix_.forward(h2));
        if (c) *c = {x, d1, a1, h1, d2, a2, h2, out};
        return {out};
    }

    // d_map is dL/d(map values); returns grads w.r.t. the concatenated input.
    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& d_map) {
        Tensor<Scalar> d = sigmoid_backward(c.out, d_map);
        d = mix_.backward(c.h2, d);
        d = activate_backward(c.a2, d, Activation::silu);
        d = dw2_.backward(c.h1, pw2_.backward(c.d2, d));
        d = activate_backward(c.a1, d, Activation::silu);
        d = dw1_.backward(c.x, pw1_.backward(c.d1, d));
        return d;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        dw1_.collect(out, prefix + ".dw1");
        pw1_.collect(out, prefix + ".pw1");
        dw2_.collect(out, prefix + ".dw2");
        pw2_.collect(out, prefix + ".pw2");
        mix_.collect(out, prefix + ".mix");
    }

    Index param_count() const {
        return dw1_.param_count() + pw1_.param_count() + dw2_.param_count() + pw2_.param_count() +
               mix_.param_count();
    }

private:
    Index in_channels_ = 0;
    ConvLayer<Scalar> dw1_, pw1_, dw2_, pw2_, mix_;
};

/// Uncertainty estimator: three conv layers with mean and log-variance heads.
template <typename Scalar>
class UncertaintyEstimator {
public:
    struct Cache {
        Tensor<Scalar> x, a1, h1, a2, h2;
    };

    UncertaintyEstimator() = default;

    UncertaintyEstimator(Index channels, Index hidden, CounterRng& rng)
        : conv1_(hidden, channels, 3, 3),
          conv2_(hidden, hidden, 3, 3),
          head_mean_(channels, hidden, 3, 3),
          head_s_(channels, hidden, 3, 3) {
        conv1_.init(rng);
        conv2_.init(rng);
        head_mean_.init(rng);
        // log-variance head starts at zero so s = 0 (unit variance) at init
        head_s_.kernel.weights.array().setZero();
        head_s_.kernel.bias.array().setZero();
    }

    UncertaintyOutput<Scalar> forward(const Tensor<Scalar>& z_lr, Cache* c = nullptr) const {
        Tensor<Scalar> a1 = conv1_.forward(z_lr);
        Tensor<Scalar> h1 = activate(a1, Activation::silu);
        Tensor<Scalar> a2 = conv2_.forward(h1);
        Tensor<Scalar> h2 = activate(a2, Activation::silu);
        if (c) *c = {z_lr, a1, h1, a2, h2};
        return {head_mean_.forward(h2), head_s_.forward(h2)};
    }

    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& d_mean,
                            const Tensor<Scalar>& d_s) {
        Tensor<Scalar> d = head_mean_.backward(c.h2, d_mean);
        d += head_s_.backward(c.h2, d_s);
        d = activate_backward(c.a2, d, Activation::silu);
        d = conv2_.backward(c.h1, d);
        d = activate_backward(c.a1, d, Activation::silu);
        return conv1_.backward(c.x, d);
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        conv1_.collect(out, prefix + ".conv1");
        conv2_.collect(out, prefix + ".conv2");
        head_mean_.collect(out, prefix + ".head_mean");
        head_s_.collect(out, prefix + ".head_s");
    }

    Index param_count() const {
        return conv1_.param_count() + conv2_.param_count() + head_mean_.param_count() +
               head_s_.param_count();
    }

private:
    ConvLayer<Scalar> conv1_, conv2_, head_mean_, head_s_;
};

}  // namespace slimdiff
