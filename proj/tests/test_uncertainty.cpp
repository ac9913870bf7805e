#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slimdiff/gradcheck.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/schedule.hpp"
#include "slimdiff/uncertainty.hpp"

#include "test_util.hpp"

#include <cmath>

using namespace slimdiff;

TEST_CASE("sample_observation limit cases and Monte Carlo variance") {
    CounterRng rng(1);
    Tensord mean = rng.gaussian_tensor<double>({1, 2, 3, 3});
    Tensord s = Tensord::zeros({1, 2, 3, 3});
    Tensord eps0 = Tensord::zeros({1, 2, 3, 3});

    Tensord z = sample_observation(mean, s, eps0);
    for (Index i = 0; i < z.size(); ++i) CHECK(z[i] == mean[i]);

    Tensord e = rng.gaussian_tensor<double>({1, 2, 3, 3});
    Tensord z1 = sample_observation(mean, s, e);
    for (Index i = 0; i < z1.size(); ++i)
        CHECK(z1[i] == doctest::Approx(mean[i] + e[i]).epsilon(1e-14));

    CHECK_THROWS(sample_observation(mean, s, Tensord({2})));

    // empirical variance over 1e5 draws equals exp(s) within 2%
    const double target_s = std::log(0.37);
    Tensord m1({1}), s1({1}, {target_s});
    double sum = 0, sum2 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        Tensord eps({1}, {rng.gaussian()});
        double v = sample_observation(m1, s1, eps)[0];
        sum += v;
        sum2 += v * v;
    }
    double var = sum2 / n - (sum / n) * (sum / n);
    CHECK(std::abs(var - 0.37) / 0.37 < 0.02);
}

TEST_CASE("uncertainty_loss closed-form values") {
    // both terms vanish
    Tensord zgt({1, 1, 2, 2}, {0.5, -1.0, 2.0, 0.0});
    UncertaintyOutput<double> out{zgt, Tensord::zeros({1, 1, 2, 2})};
    CHECK(uncertainty_loss(zgt, out) == doctest::Approx(0.0).epsilon(1e-15));

    // single element, diff = 2, s = 0 -> (4 + 0)/2 = 2
    Tensord g1({1}, {2.0});
    UncertaintyOutput<double> o1{Tensord::zeros({1}), Tensord::zeros({1})};
    CHECK(uncertainty_loss(g1, o1) == doctest::Approx(2.0).epsilon(1e-15));

    // single element, diff = 2, s = ln 4 -> (1 + 3 ln 4)/2
    UncertaintyOutput<double> o2{Tensord::zeros({1}), Tensord({1}, {std::log(4.0)})};
    double expected = (1.0 + 3.0 * std::log(4.0)) / 2.0;
    CHECK(uncertainty_loss(g1, o2) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(2.5794).epsilon(1e-4));

    CHECK_THROWS(uncertainty_loss(Tensord({3}), o2));
}

TEST_CASE("uncertainty_loss analytic gradients match finite differences (5 seeds)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CounterRng rng(seed);
        Tensord zgt = rng.gaussian_tensor<double>({2, 2, 3, 3});
        Tensord mean = rng.gaussian_tensor<double>({2, 2, 3, 3});
        Tensord s = rng.gaussian_tensor<double>({2, 2, 3, 3}, 0.5);

        auto r = uncertainty_loss_with_grad(zgt, UncertaintyOutput<double>{mean, s});

        Tensord dm_num = finite_diff_grad<double>(
            [&](const Tensord& m) { return uncertainty_loss(zgt, {m, s}); }, mean);
        Tensord ds_num = finite_diff_grad<double>(
            [&](const Tensord& ss) { return uncertainty_loss(zgt, {mean, ss}); }, s);

        CHECK(max_rel_error(r.d_z_mean, dm_num) < 1e-5);
        CHECK(max_rel_error(r.d_s, ds_num) < 1e-5);
    }
}

TEST_CASE("uncertainty_loss is minimized over s at s* = ln(d^2/3)") {
    const double d = 1.7;
    Tensord zgt({1}, {d});
    Tensord mean({1}, {0.0});
    double s_star = std::log(d * d / 3.0);
    auto loss_at = [&](double s) {
        return uncertainty_loss(zgt, UncertaintyOutput<double>{mean, Tensord({1}, {s})});
    };
    double at_star = loss_at(s_star);
    for (double off : {-0.5, -0.1, 0.1, 0.5}) CHECK(loss_at(s_star + off) > at_star);

    auto g = uncertainty_loss_with_grad(zgt, {mean, Tensord({1}, {s_star})});
    CHECK(std::abs(g.d_s[0]) < 1e-12);
}

TEST_CASE("analytic_alpha_target arithmetic and monotonicity") {
    Tensord v1({1}, {1e-12});
    CHECK(analytic_alpha_target(v1, 1.0).values[0] == doctest::Approx(1.0).epsilon(1e-9));

    Tensord v2({1}, {0.7});
    CHECK(analytic_alpha_target(v2, 0.7).values[0] == doctest::Approx(0.5).epsilon(1e-14));

    Tensord v3({1}, {3.0});
    CHECK(analytic_alpha_target(v3, 1.0).values[0] == doctest::Approx(0.25).epsilon(1e-14));

    CHECK_THROWS(analytic_alpha_target(v3, 0.0));
    CHECK_THROWS(analytic_alpha_target(Tensord({1}, {-1.0}), 1.0));

    // strictly decreasing in z_var
    double prev = 2.0;
    for (double var = 0.1; var < 10.0; var += 0.5) {
        double a = analytic_alpha_target(Tensord({1}, {var}), 1.0).values[0];
        CHECK(a < prev);
        prev = a;
    }
}

TEST_CASE("larger z_var maps to a larger timestep through inversion") {
    NoiseSchedule sched = build_schedule(ScheduleKind::linear, 1000);
    double prev_t = 0.0;
    for (double var = 0.05; var < 20.0; var *= 1.7) {
        double a = analytic_alpha_target(Tensord({1}, {var}), 1.0).values[0];
        double t = invert_alpha(a, sched);
        CHECK(t > prev_t);
        prev_t = t;
    }
}

TEST_CASE("tv_loss closed-form values and properties") {
    CHECK(tv_loss(Tensord::full({4, 5}, 0.3)) == doctest::Approx(0.0).epsilon(1e-15));

    Tensord m({2, 2}, {0.0, 1.0, 0.0, 1.0});
    CHECK(tv_loss(m) == doctest::Approx(2.0).epsilon(1e-15));

    CounterRng rng(4);
    Tensord r = rng.gaussian_tensor<double>({6, 7});
    Tensord shifted = r;
    for (Index i = 0; i < shifted.size(); ++i) shifted[i] += 3.14;
    CHECK(tv_loss(r) == doctest::Approx(tv_loss(shifted)).epsilon(1e-12));

    CHECK_THROWS(tv_loss(Tensord({1, 5})));
    CHECK_THROWS(tv_loss(Tensord({5, 1})));
}

TEST_CASE("tv_loss gradient matches finite differences (5 seeds)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CounterRng rng(seed * 3);
        Tensord m = rng.gaussian_tensor<double>({1, 1, 5, 6});
        Tensord g = tv_loss_backward(m);
        Tensord g_num =
            finite_diff_grad<double>([](const Tensord& t) { return tv_loss(t); }, m);
        CHECK(max_rel_error(g, g_num) < 1e-6);
    }
}

TEST_CASE("predictor output lies in (0,1) and starts at 0.5") {
    CounterRng rng(6);
    PredictorNet<double> pred(4, 8, rng);
    Tensord zref = rng.gaussian_tensor<double>({2, 4, 6, 6});
    Tensord zvar = rng.uniform_tensor<double>({2, 4, 6, 6}, 0.01, 2.0);

    auto m = pred.forward(zref, zvar);
    m.validate();
    // zero-initialized final mix layer: sigmoid(0) = 0.5 everywhere
    for (Index i = 0; i < m.values.size(); ++i)
        CHECK(m.values[i] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.values.extent(1) == 1);
    CHECK(m.scalar_reduction() == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS(pred.forward(zref, Tensord({2, 4, 5, 5})));
}

TEST_CASE("predictor parameter gradients match finite differences (5 seeds)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CounterRng rng(seed * 11);
        PredictorNet<double> pred(3, 6, rng);
        // zero-init of the mix layer kills most gradients; give it signal
        ParamList<double> params;
        pred.collect(params, "pred");
        for (auto& p : params)
            if (p.name.find("mix") != std::string::npos)
                for (Index i = 0; i < p.value->size(); ++i) (*p.value)[i] = 0.3 * rng.gaussian();

        Tensord zref = rng.gaussian_tensor<double>({1, 3, 5, 5});
        Tensord zvar = rng.uniform_tensor<double>({1, 3, 5, 5}, 0.05, 1.5);

        auto loss = [&] {
            auto m = pred.forward(zref, zvar);
            return m.values.mean();
        };
        double base = loss();
        CHECK(base > 0.0);
        zero_grads(params);
        PredictorNet<double>::Cache cache;
        pred.forward(zref, zvar, &cache);
        Tensord d_map(Shape{1, 1, 5, 5}, 1.0 / 25.0);
        pred.backward(cache, d_map);

        double err = test::check_param_grads(params, loss, rng);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("uncertainty estimator trains toward known variance structure") {
    // supervised oracle check: on data where the first half of positions is
    // exactly predictable and the second half is pure noise, the trained
    // log-variance separates the halves
    CounterRng rng(8);
    UncertaintyEstimator<double> ue(2, 8, rng);
    ParamList<double> params;
    ue.collect(params, "ue");
    SgdMomentum<double> opt(0.05);

    const Index hw = 8;
    for (int iter = 0; iter < 300; ++iter) {
        Tensord z_lr = rng.gaussian_tensor<double>({2, 2, hw, hw});
        Tensord z_gt = z_lr;
        for (Index b = 0; b < 2; ++b)
            for (Index c = 0; c < 2; ++c)
                for (Index i = 0; i < hw; ++i)
                    for (Index j = hw / 2; j < hw; ++j)
                        z_gt.at4(b, c, i, j) += 0.9 * rng.gaussian();

        UncertaintyEstimator<double>::Cache cache;
        auto out = ue.forward(z_lr, &cache);
        auto g = uncertainty_loss_with_grad(z_gt, out);
        zero_grads(params);
        ue.backward(cache, g.d_z_mean, g.d_s);
        opt.step(params);
    }

    Tensord probe = rng.gaussian_tensor<double>({1, 2, hw, hw});
    auto out = ue.forward(probe);
    double left = 0, right = 0;
    for (Index c = 0; c < 2; ++c)
        for (Index i = 0; i < hw; ++i)
            for (Index j = 0; j < hw; ++j)
                (j < hw / 2 ? left : right) += std::exp(out.s.at4(0, c, i, j));
    CHECK(right > left * 2.0);
}
