#pragma once

#include "slimdiff/layers.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace slimdiff {

/// RBF kernel bandwidth: a fixed sigma, or the median heuristic resolved per
/// sample-set pair.
struct KernelConfig {
    enum class Mode { fixed, median };
    Mode mode = Mode::median;
    double sigma = 1.0;

    static KernelConfig fixed(double s) {
        if (s <= 0) throw std::invalid_argument("KernelConfig: sigma must be positive");
        return {Mode::fixed, s};
    }
    static KernelConfig median() { return {Mode::median, 0.0}; }
};

/// Median of the pairwise Euclidean distances of the joint set (zero
/// self-pairs excluded); the per-batch bandwidth default.
template <typename Scalar>
double median_heuristic_sigma(const Tensor<Scalar>& p, const Tensor<Scalar>& q) {
    const Index d = p.extent(1);
    if (q.extent(1) != d) throw std::invalid_argument("median_heuristic: dim mismatch");
    const Index m = p.extent(0), n = q.extent(0);
    const Index total = m + n;
    auto row = [&](Index i) { return i < m ? p.data() + i * d : q.data() + (i - m) * d; };

    std::vector<double> dists;
    dists.reserve(static_cast<size_t>(total * (total - 1) / 2));
    for (Index i = 0; i < total; ++i)
        for (Index j = i + 1; j < total; ++j) {
            const Scalar* a = row(i);
            const Scalar* b = row(j);
            double d2 = 0;
            for (Index k = 0; k < d; ++k) d2 += double(a[k] - b[k]) * double(a[k] - b[k]);
            if (d2 > 0) dists.push_back(std::sqrt(d2));
        }
    if (dists.empty()) return 1.0;
    size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(mid), dists.end());
    return dists[mid];
}

template <typename Scalar>
double resolve_sigma(const KernelConfig& cfg, const Tensor<Scalar>& p, const Tensor<Scalar>& q) {
    if (cfg.mode == KernelConfig::Mode::fixed) {
        if (cfg.sigma <= 0) throw std::invalid_argument("rbf: sigma must be positive");
        return cfg.sigma;
    }
    return median_heuristic_sigma(p, q);
}

/// k(x, y) = exp(-|x - y|^2 / (2 sigma^2)) for two vectors.
template <typename Scalar>
double rbf_kernel(const Tensor<Scalar>& x, const Tensor<Scalar>& y, const KernelConfig& cfg) {
    if (!x.same_shape(y)) throw std::invalid_argument("rbf_kernel: dim mismatch");
    if (cfg.mode != KernelConfig::Mode::fixed)
        throw std::invalid_argument("rbf_kernel: sigma must be resolved (fixed) here");
    if (cfg.sigma <= 0) throw std::invalid_argument("rbf_kernel: sigma must be positive");
    double d2 = 0;
    for (Index i = 0; i < x.size(); ++i) d2 += double(x[i] - y[i]) * double(x[i] - y[i]);
    return std::exp(-d2 / (2 * cfg.sigma * cfg.sigma));
}

namespace detail {

template <typename Scalar>
double kernel_sum(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double sigma) {
    const Index m = a.extent(0), n = b.extent(0), d = a.extent(1);
    const double inv = -1.0 / (2 * sigma * sigma);
    double acc = 0;
    for (Index i = 0; i < m; ++i) {
        const Scalar* x = a.data() + i * d;
        for (Index j = 0; j < n; ++j) {
            const Scalar* y = b.data() + j * d;
            double d2 = 0;
            for (Index k = 0; k < d; ++k) d2 += double(x[k] - y[k]) * double(x[k] - y[k]);
            acc += std::exp(inv * d2);
        }
    }
    return acc;
}

// Accumulation order for the cross term chosen independently of argument
// position, so mmd2(P,Q) and mmd2(Q,P) round identically.
template <typename Scalar>
bool canonical_first(const Tensor<Scalar>& p, const Tensor<Scalar>& q) {
    if (p.extent(0) != q.extent(0)) return p.extent(0) > q.extent(0);
    for (Index i = 0; i < p.size() && i < q.size(); ++i) {
        if (p[i] < q[i]) return true;
        if (p[i] > q[i]) return false;
    }
    return true;
}

template <typename Scalar>
double cross_kernel_sum(const Tensor<Scalar>& p, const Tensor<Scalar>& q, double sigma) {
    return canonical_first(p, q) ? kernel_sum(p, q, sigma) : kernel_sum(q, p, sigma);
}

}  // namespace detail

/// Biased (V-statistic) squared MMD with the RBF kernel; diagonal terms kept,
/// so the estimate is non-negative and exactly zero for identical sets.
/// Rows are samples.
template <typename Scalar>
double mmd2(const Tensor<Scalar>& p, const Tensor<Scalar>& q, const KernelConfig& cfg) {
    if (p.rank() != 2 || q.rank() != 2) throw std::invalid_argument("mmd2: sample sets are (n,d)");
    if (p.extent(0) == 0 || q.extent(0) == 0) throw std::invalid_argument("mmd2: empty sample set");
    if (p.extent(1) != q.extent(1)) throw std::invalid_argument("mmd2: dim mismatch");
    const double sigma = resolve_sigma(cfg, p, q);
    const double m = double(p.extent(0)), n = double(q.extent(0));
    double v = detail::kernel_sum(p, p, sigma) / (m * m) +
               detail::kernel_sum(q, q, sigma) / (n * n) -
               2 * detail::cross_kernel_sum(p, q, sigma) / (m * n);
    return std::max(v, 0.0);  // clip the tiny negative rounding residue
}

template <typename Scalar>
struct Mmd2Grads {
    double value = 0;
    double sigma = 0;
    Tensor<Scalar> d_p;
    Tensor<Scalar> d_q;
};

/// Analytic gradient w.r.t. the samples. The bandwidth (median mode included)
/// is treated as a constant of the batch.
template <typename Scalar>
Mmd2Grads<Scalar> mmd2_with_grad(const Tensor<Scalar>& p, const Tensor<Scalar>& q,
                                 const KernelConfig& cfg) {
    Mmd2Grads<Scalar> r;
    r.sigma = resolve_sigma(cfg, p, q);
    KernelConfig fixed = KernelConfig::fixed(r.sigma);
    r.value = mmd2(p, q, fixed);
    r.d_p = Tensor<Scalar>(p.shape());
    r.d_q = Tensor<Scalar>(q.shape());

    const Index m = p.extent(0), n = q.extent(0), d = p.extent(1);
    const double inv2s2 = 1.0 / (2 * r.sigma * r.sigma);
    const double inv_s2 = 1.0 / (r.sigma * r.sigma);

    auto accumulate = [&](const Tensor<Scalar>& a, const Tensor<Scalar>& b, double coeff,
                          Tensor<Scalar>& da) {
        // d/da_i of coeff * sum_{i,j} k(a_i, b_j): coeff * k * (b_j - a_i)/sigma^2
        const Index ma = a.extent(0), nb = b.extent(0);
        for (Index i = 0; i < ma; ++i) {
            const Scalar* x = a.data() + i * d;
            Scalar* g = da.data() + i * d;
            for (Index j = 0; j < nb; ++j) {
                const Scalar* y = b.data() + j * d;
                double d2 = 0;
                for (Index k = 0; k < d; ++k) d2 += double(x[k] - y[k]) * double(x[k] - y[k]);
                double kv = std::exp(-d2 * inv2s2) * coeff * inv_s2;
                for (Index k = 0; k < d; ++k) g[k] += Scalar(kv * (double(y[k]) - double(x[k])));
            }
        }
    };

    // xx term appears twice per unordered pair, hence the factor 2
    accumulate(p, p, 2.0 / (double(m) * m), r.d_p);
    accumulate(q, q, 2.0 / (double(n) * n), r.d_q);
    accumulate(p, q, -2.0 / (double(m) * n), r.d_p);
    accumulate(q, p, -2.0 / (double(m) * n), r.d_q);
    return r;
}

/// (B,C,H,W) feature map -> (B*H*W, C) sample set of per-position channel
/// vectors.
template <typename Scalar>
Tensor<Scalar> flatten_positions(const Tensor<Scalar>& t) {
    if (t.rank() != 4) throw std::invalid_argument("flatten_positions: need 4-d");
    const Index B = t.extent(0), C = t.extent(1), hw = t.extent(2) * t.extent(3);
    Tensor<Scalar> out({B * hw, C});
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            const Scalar* src = t.data() + (b * C + c) * hw;
            for (Index i = 0; i < hw; ++i) out[(b * hw + i) * C + c] = src[i];
        }
    return out;
}

template <typename Scalar>
void scatter_position_grads(Tensor<Scalar>& dst, const Tensor<Scalar>& row_grads,
                            const std::vector<Index>& rows) {
    const Index C = dst.extent(1), hw = dst.extent(2) * dst.extent(3);
    for (size_t r = 0; r < rows.size(); ++r) {
        Index pos = rows[r];
        Index b = pos / hw, i = pos % hw;
        for (Index c = 0; c < C; ++c)
            dst.data()[(b * C + c) * hw + i] += row_grads[Index(r) * C + c];
    }
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& t, const std::vector<Index>& rows) {
    const Index d = t.extent(1);
    Tensor<Scalar> out({Index(rows.size()), d});
    for (size_t r = 0; r < rows.size(); ++r)
        for (Index c = 0; c < d; ++c) out[Index(r) * d + c] = t[rows[r] * d + c];
    return out;
}

/// At most max_rows row indices, drawn without replacement with the run rng.
inline std::vector<Index> subsample_rows(Index total, Index max_rows, CounterRng& rng) {
    std::vector<Index> idx(static_cast<size_t>(total));
    for (Index i = 0; i < total; ++i) idx[static_cast<size_t>(i)] = i;
    if (total <= max_rows) return idx;
    for (Index i = 0; i < max_rows; ++i) {
        Index j = i + Index(rng.uniform_index(std::uint64_t(total - i)));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    idx.resize(static_cast<size_t>(max_rows));
    return idx;
}

/// Per-layer 1x1 conv mapping student channels onto the paired teacher
/// layer's channel count.
template <typename Scalar>
struct FeatureAdapter {
    ConvLayer<Scalar> conv;

    FeatureAdapter() = default;
    FeatureAdapter(Index student_ch, Index teacher_ch, CounterRng& rng)
        : conv(teacher_ch, student_ch, 1, 1) {
        conv.init(rng);
        // near-identity start when the widths already agree
        if (student_ch == teacher_ch) {
            conv.kernel.weights.array().setZero();
            for (Index c = 0; c < student_ch; ++c) conv.kernel.weights.at4(c, c, 0, 0) = 1;
        }
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& f) const { return conv.forward(f); }
    Tensor<Scalar> backward(const Tensor<Scalar>& f, const Tensor<Scalar>& dy) {
        return conv.backward(f, dy);
    }
    void collect(ParamList<Scalar>& out, const std::string& prefix) { conv.collect(out, prefix); }
};

namespace detail {

template <typename Scalar>
void check_dis_inputs(const std::vector<Tensor<Scalar>>& stu,
                      const std::vector<Tensor<Scalar>>& tea,
                      const std::vector<FeatureAdapter<Scalar>>& adapters) {
    if (stu.size() != tea.size() || stu.size() != adapters.size())
        throw std::invalid_argument("feature distillation: layer lists misaligned");
    if (stu.empty()) throw std::invalid_argument("feature distillation: no layers");
}

}  // namespace detail

/// (1/N) sum_i || phi(f_stu_i) - f_tea_i ||^2 with the squared Frobenius norm
/// per layer.
template <typename Scalar>
double mse_dis(const std::vector<Tensor<Scalar>>& stu, const std::vector<Tensor<Scalar>>& tea,
               const std::vector<FeatureAdapter<Scalar>>& adapters) {
    detail::check_dis_inputs(stu, tea, adapters);
    double acc = 0;
    for (size_t i = 0; i < stu.size(); ++i) {
        Tensor<Scalar> adapted = adapters[i].forward(stu[i]);
        if (!adapted.same_shape(tea[i]))
            throw std::invalid_argument("mse_dis: adapter output does not match teacher shape");
        acc += double((adapted - tea[i]).array().square().sum());
    }
    return acc / double(stu.size());
}

struct DisLossParts {
    double total = 0;
    double mse = 0;
    double mmd = 0;  // layer-averaged MMD^2, before the lambda weight
};

/// L_Dis = L_MSE-Dis + lambda * L_MMD-Dis. The MMD sample sets are the
/// per-position channel vectors (student after adapter), pooled over the
/// batch, per layer and averaged, with at most max_samples rows per set.
template <typename Scalar>
DisLossParts dis_loss(const std::vector<Tensor<Scalar>>& stu,
                      const std::vector<Tensor<Scalar>>& tea,
                      const std::vector<FeatureAdapter<Scalar>>& adapters,
                      const KernelConfig& cfg, double lambda, CounterRng& rng,
                      Index max_samples = 1024) {
    detail::check_dis_inputs(stu, tea, adapters);
    DisLossParts parts;
    const double n_layers = double(stu.size());
    for (size_t i = 0; i < stu.size(); ++i) {
        Tensor<Scalar> adapted = adapters[i].forward(stu[i]);
        if (!adapted.same_shape(tea[i]))
            throw std::invalid_argument("dis_loss: adapter output does not match teacher shape");
        parts.mse += double((adapted - tea[i]).array().square().sum()) / n_layers;
        if (lambda != 0.0) {
            Tensor<Scalar> ps = flatten_positions(adapted);
            Tensor<Scalar> pt = flatten_positions(tea[i]);
            auto rows_s = subsample_rows(ps.extent(0), max_samples, rng);
            auto rows_t = subsample_rows(pt.extent(0), max_samples, rng);
            parts.mmd += mmd2(gather_rows(ps, rows_s), gather_rows(pt, rows_t), cfg) / n_layers;
        }
    }
    parts.total = parts.mse + lambda * parts.mmd;
    return parts;
}

template <typename Scalar>
struct DisLossGrads {
    DisLossParts parts;
    std::vector<Tensor<Scalar>> d_student;  // per layer, shape of stu[i]
};

/// Loss plus gradients w.r.t. the raw student features; adapter weight
/// gradients accumulate inside the adapters.
template <typename Scalar>
DisLossGrads<Scalar> dis_loss_with_grad(const std::vector<Tensor<Scalar>>& stu,
                                        const std::vector<Tensor<Scalar>>& tea,
                                        std::vector<FeatureAdapter<Scalar>>& adapters,
                                        const KernelConfig& cfg, double lambda, CounterRng& rng,
                                        Index max_samples = 1024) {
    detail::check_dis_inputs(stu, tea, adapters);
    DisLossGrads<Scalar> out;
    const double n_layers = double(stu.size());
    for (size_t i = 0; i < stu.size(); ++i) {
        Tensor<Scalar> adapted = adapters[i].forward(stu[i]);
        if (!adapted.same_shape(tea[i]))
            throw std::invalid_argument("dis_loss: adapter output does not match teacher shape");
        Tensor<Scalar> diff = adapted - tea[i];
        out.parts.mse += double(diff.array().square().sum()) / n_layers;
        Tensor<Scalar> d_adapted = diff * Scalar(2.0 / n_layers);

        if (lambda != 0.0) {
            Tensor<Scalar> ps = flatten_positions(adapted);
            Tensor<Scalar> pt = flatten_positions(tea[i]);
            auto rows_s = subsample_rows(ps.extent(0), max_samples, rng);
            auto rows_t = subsample_rows(pt.extent(0), max_samples, rng);
            auto g = mmd2_with_grad(gather_rows(ps, rows_s), gather_rows(pt, rows_t), cfg);
            out.parts.mmd += g.value / n_layers;
            g.d_p *= Scalar(lambda / n_layers);
            scatter_position_grads(d_adapted, g.d_p, rows_s);
        }
        out.d_student.push_back(adapters[i].backward(stu[i], d_adapted));
    }
    out.parts.total = out.parts.mse + lambda * out.parts.mmd;
    return out;
}

}  // namespace slimdiff
