#pragma once

#include "slimdiff/tensor.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace slimdiff {

/// Central-difference gradient of a scalar-valued function of a tensor:
///   g_i = (f(x + h e_i) - f(x - h e_i)) / (2h)
/// f must be pure; non-determinism is detected by evaluating f(x) twice.
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f,
                                const Tensor<Scalar>& x, Scalar h = Scalar(1e-5)) {
    if (!(h >= Scalar(1e-7) && h <= Scalar(1e-3)))
        throw std::invalid_argument("finite_diff_grad: h outside [1e-7, 1e-3]");
    Scalar f0 = f(x);
    Scalar f1 = f(x);
    if (f0 != f1) throw std::runtime_error("finite_diff_grad: f is not deterministic");

    Tensor<Scalar> g(x.shape());
    Tensor<Scalar> xp = x;
    for (Index i = 0; i < x.size(); ++i) {
        Scalar orig = xp[i];
        xp[i] = orig + h;
        Scalar fp = f(xp);
        xp[i] = orig - h;
        Scalar fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

/// Worst-case deviation between analytic and numeric gradients, measured
/// relative to the larger of the two gradients' max-norms. Per-element
/// relative error is ill-conditioned where a component crosses zero, so the
/// gradient's own scale is the denominator.
template <typename Scalar>
Scalar max_rel_error(const Tensor<Scalar>& analytic, const Tensor<Scalar>& numeric) {
    if (!analytic.same_shape(numeric))
        throw std::invalid_argument("max_rel_error: shape mismatch");
    Scalar scale = std::max({analytic.array().abs().maxCoeff(), numeric.array().abs().maxCoeff(),
                             Scalar(1e-12)});
    Scalar worst = 0;
    for (Index i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    return worst;
}

}  // namespace slimdiff
