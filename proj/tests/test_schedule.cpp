#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slimdiff/rng.hpp"
#include "slimdiff/schedule.hpp"

#include <cmath>

using namespace slimdiff;

TEST_CASE("build_schedule invariants (linear and cosine)") {
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        NoiseSchedule s = build_schedule(kind, 1000);
        CHECK(s.alpha_bars[0] == 1.0);  // empty product
        for (int t = 1; t <= s.T; ++t) {
            CHECK(s.alpha_bars[size_t(t)] > 0.0);
            CHECK(s.alpha_bars[size_t(t)] < s.alpha_bars[size_t(t) - 1]);
        }
        for (double b : s.betas) {
            CHECK(b > 0.0);
            CHECK(b < 1.0);
        }
    }
    CHECK_THROWS(build_schedule(ScheduleKind::linear, 1));
}

TEST_CASE("linear schedule endpoint values") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    CHECK(s.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
    // one factor: alpha_bar_1 = 1 - beta_1
    CHECK(s.alpha_bars[1] == doctest::Approx(0.9999).epsilon(1e-12));

    // running product oracle for the tail value
    double prod = 1.0;
    for (double b : s.betas) prod *= (1.0 - b);
    CHECK(s.alpha_bars[1000] == doctest::Approx(prod).epsilon(1e-12));
    CHECK(s.alpha_bars[1000] > 0.0);
    CHECK(s.alpha_bars[1000] < 0.01);
}

TEST_CASE("forward_diffuse endpoint and zero-noise cases") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 100);
    CounterRng rng(5);
    Tensord z0 = rng.gaussian_tensor<double>({1, 2, 3, 3});
    Tensord eps = rng.gaussian_tensor<double>({1, 2, 3, 3});

    Tensord at0 = forward_diffuse(z0, 0, eps, s);
    for (Index i = 0; i < z0.size(); ++i) CHECK(at0[i] == z0[i]);

    Tensord zero_eps(z0.shape());
    Tensord no_noise = forward_diffuse(z0, 40, zero_eps, s);
    double c = std::sqrt(s.alpha_bar(40));
    for (Index i = 0; i < z0.size(); ++i)
        CHECK(no_noise[i] == doctest::Approx(c * z0[i]).epsilon(1e-14));

    CHECK_THROWS(forward_diffuse(z0, -1, eps, s));
    CHECK_THROWS(forward_diffuse(z0, 101, eps, s));
    CHECK_THROWS(forward_diffuse(z0, 5, Tensord({1, 2, 3, 4}), s));
}

TEST_CASE("forward_diffuse variance matches 1 - alpha_bar (Monte Carlo)") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    CounterRng rng(7);
    const int t = 400, n = 100000;
    Tensord z0({1});
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        Tensord eps({1}, {rng.gaussian()});
        double v = forward_diffuse(z0, t, eps, s)[0];
        sum += v;
        sum2 += v * v;
    }
    double var = sum2 / n - (sum / n) * (sum / n);
    double expected = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(var - expected) / expected < 0.02);
}

TEST_CASE("forward_diffuse is linear in (z0, eps)") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 50);
    CounterRng rng(9);
    Tensord z0 = rng.gaussian_tensor<double>({2, 1, 4, 4});
    Tensord z1 = rng.gaussian_tensor<double>({2, 1, 4, 4});
    Tensord e0 = rng.gaussian_tensor<double>({2, 1, 4, 4});
    Tensord e1 = rng.gaussian_tensor<double>({2, 1, 4, 4});
    double a = 0.3, b = -1.2;
    Tensord lhs = forward_diffuse(z0 * a + z1 * b, 20, e0 * a + e1 * b, s);
    Tensord rhs = forward_diffuse(z0, 20, e0, s) * a + forward_diffuse(z1, 20, e1, s) * b;
    for (Index i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
}

TEST_CASE("snr_diff arithmetic and monotonicity") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    // direct arithmetic identities on synthetic alpha values
    NoiseSchedule tiny = s;
    tiny.alpha_bars[3] = 0.5;
    CHECK(snr_diff(3, tiny) == doctest::Approx(1.0).epsilon(1e-15));
    tiny.alpha_bars[3] = 0.8;
    CHECK(snr_diff(3, tiny) == doctest::Approx(4.0).epsilon(1e-13));

    for (int t = 1; t < s.T; ++t) CHECK(snr_diff(t, s) > snr_diff(t + 1, s));
    CHECK_THROWS(snr_diff(0, s));
}

TEST_CASE("invert_alpha: exact table hits round trip for every t") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    for (int t = 1; t <= s.T; ++t) {
        double got = invert_alpha(s.alpha_bars[size_t(t)], s);
        CHECK(std::abs(got - double(t)) < 1e-9);
    }
}

TEST_CASE("invert_alpha: interpolated midpoints land on t + 0.5") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    for (int t = 1; t < s.T; t += 37) {
        double mid = 0.5 * (s.alpha_bars[size_t(t)] + s.alpha_bars[size_t(t) + 1]);
        CHECK(std::abs(invert_alpha(mid, s) - (double(t) + 0.5)) < 1e-9);
    }
}

TEST_CASE("invert_alpha clamps out-of-range targets and rejects NaN") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    CHECK(invert_alpha(0.99999, s) == 1.0);  // above alpha_bar_1
    CHECK(invert_alpha(1.5, s) == 1.0);
    CHECK(invert_alpha(1e-9, s) == 1000.0);  // below alpha_bar_T
    CHECK_THROWS(invert_alpha(std::nan(""), s));

    // clamped queries provide zero slope
    CHECK(invert_alpha_full(1.5, s).dt_dalpha == 0.0);
    CHECK(invert_alpha_full(1e-9, s).dt_dalpha == 0.0);
}

TEST_CASE("invert_alpha is strictly decreasing over the valid range") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    double lo = s.alpha_bars[1000], hi = s.alpha_bars[1];
    double prev = invert_alpha(lo + 1e-12, s);
    for (int i = 1; i <= 500; ++i) {
        double a = lo + (hi - lo) * double(i) / 500.0;
        double t = invert_alpha(a, s);
        CHECK(t < prev);
        prev = t;
    }
}

TEST_CASE("invert_alpha slope agrees with finite differences") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 1000);
    for (double a : {0.9, 0.5, 0.1, 0.01}) {
        auto inv = invert_alpha_full(a, s);
        double h = 1e-9;
        double num = (invert_alpha(a + h, s) - invert_alpha(a - h, s)) / (2 * h);
        CHECK(inv.dt_dalpha == doctest::Approx(num).epsilon(1e-3));
    }
}

TEST_CASE("round_timestep rounds half to even") {
    CHECK(round_timestep(2.5) == 2);
    CHECK(round_timestep(3.5) == 4);
    CHECK(round_timestep(2.4) == 2);
    CHECK(round_timestep(2.6) == 3);
}
