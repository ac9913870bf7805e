#pragma once

#include "slimdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdiff {

enum class ScheduleKind { linear, cosine };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

/// Precomputed diffusion noise schedule. alpha_bars[t] = prod_{i<=t} (1 - beta_i),
/// with alpha_bars[0] = 1 (empty product). Immutable after construction.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // betas[t-1] is beta_t, t in 1..T
    std::vector<double> alpha_bars;  // length T+1, strictly decreasing
    std::vector<double> timesteps;   // 0..T, aligned with alpha_bars

    double alpha_bar(int t) const {
        if (t < 0 || t > T) throw std::out_of_range("alpha_bar: t out of range");
        return alpha_bars[static_cast<size_t>(t)];
    }
};

inline NoiseSchedule build_schedule(ScheduleKind kind, int T) {
    if (T < 2) throw std::invalid_argument("build_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T) + 1);
    s.timesteps.resize(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) s.timesteps[static_cast<size_t>(t)] = double(t);

    if (kind == ScheduleKind::linear) {
        const double beta_lo = 1e-4, beta_hi = 0.02;
        for (int t = 0; t < T; ++t)
            s.betas[static_cast<size_t>(t)] = beta_lo + (beta_hi - beta_lo) * double(t) / double(T - 1);
        s.alpha_bars[0] = 1.0;
        for (int t = 1; t <= T; ++t)
            s.alpha_bars[static_cast<size_t>(t)] =
                s.alpha_bars[static_cast<size_t>(t) - 1] * (1.0 - s.betas[static_cast<size_t>(t) - 1]);
    } else {
        // squared-cosine alpha_bar with the usual 0.008 offset; betas derived
        const double off = 0.008;
        auto f = [&](double t) {
            double v = std::cos((t / double(T) + off) / (1.0 + off) * M_PI / 2.0);
            return v * v;
        };
        s.alpha_bars[0] = 1.0;
        double f0 = f(0.0);
        for (int t = 1; t <= T; ++t) {
            double ab = f(double(t)) / f0;
            double beta = 1.0 - ab / s.alpha_bars[static_cast<size_t>(t) - 1];
            beta = std::clamp(beta, 1e-8, 0.999);
            s.betas[static_cast<size_t>(t) - 1] = beta;
            s.alpha_bars[static_cast<size_t>(t)] =
                s.alpha_bars[static_cast<size_t>(t) - 1] * (1.0 - beta);
        }
    }

    for (int t = 0; t < T; ++t) {
        double b = s.betas[static_cast<size_t>(t)];
        if (!(b > 0.0 && b < 1.0)) throw std::logic_error("build_schedule: beta out of (0,1)");
    }
    for (int t = 1; t <= T; ++t)
        if (!(s.alpha_bars[static_cast<size_t>(t)] < s.alpha_bars[static_cast<size_t>(t) - 1]))
            throw std::logic_error("build_schedule: alpha_bar not strictly decreasing");
    return s;
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename Scalar>
Tensor<Scalar> forward_diffuse(const Tensor<Scalar>& z0, int t, const Tensor<Scalar>& eps,
                               const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) throw std::out_of_range("forward_diffuse: t out of range");
    if (!z0.same_shape(eps)) throw std::invalid_argument("forward_diffuse: shape mismatch");
    double ab = sched.alpha_bar(t);
    Tensor<Scalar> out = z0;
    out.array() = Scalar(std::sqrt(ab)) * z0.array() + Scalar(std::sqrt(1.0 - ab)) * eps.array();
    return out;
}

/// SNR_diff(t) = abar_t / (1 - abar_t); t = 0 is a division by zero.
inline double snr_diff(int t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw std::out_of_range("snr_diff: t must be in 1..T");
    double ab = sched.alpha_bar(t);
    return ab / (1.0 - ab);
}

struct AlphaInversion {
    double t_star = 0.0;
    double dt_dalpha = 0.0;  // zero when the query was clamped
};

/// Maps a target noise level back to a continuous timestep by binary search
/// over the table and linear interpolation in timestep space. The inversion
/// domain is t in [1, T]; targets outside [abar_T, abar_1] are clamped.
inline AlphaInversion invert_alpha_full(double alpha_target, const NoiseSchedule& sched) {
    if (std::isnan(alpha_target)) throw std::invalid_argument("invert_alpha: NaN target");
    const auto& ab = sched.alpha_bars;
    const size_t T = static_cast<size_t>(sched.T);

    if (alpha_target >= ab[1]) return {1.0, 0.0};
    if (alpha_target <= ab[T]) return {double(sched.T), 0.0};

    // alpha_bars is strictly decreasing over t = 1..T; find j with
    // ab[j] <= target <= ab[j-1]
    size_t lo = 1, hi = T;
    while (hi - lo > 1) {
        size_t mid = (lo + hi) / 2;
        if (ab[mid] > alpha_target)
            lo = mid;
        else
            hi = mid;
    }
    size_t j = hi;
    if (alpha_target == ab[j]) return {sched.timesteps[j], 0.0};

    double t0 = sched.timesteps[j - 1], t1 = sched.timesteps[j];
    double slope = (t1 - t0) / (ab[j] - ab[j - 1]);
    return {t0 + (alpha_target - ab[j - 1]) * slope, slope};
}

inline double invert_alpha(double alpha_target, const NoiseSchedule& sched) {
    return invert_alpha_full(alpha_target, sched).t_star;
}

/// Continuous-to-integer conditioning step, round-half-to-even.
inline int round_timestep(double t_star) {
    double r = std::nearbyint(t_star);  // default FE_TONEAREST rounds half to even
    return static_cast<int>(r);
}

}  // namespace slimdiff
