#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slimdiff/distill.hpp"
#include "slimdiff/gradcheck.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/rng.hpp"

#include "naive_ref.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace slimdiff;

namespace {

std::vector<std::vector<double>> to_rows(const Tensord& t) {
    std::vector<std::vector<double>> rows;
    for (Index i = 0; i < t.extent(0); ++i) {
        std::vector<double> r;
        for (Index j = 0; j < t.extent(1); ++j) r.push_back(t[i * t.extent(1) + j]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

TEST_CASE("rbf kernel closed forms") {
    Tensord x({3}, {0.4, -1.0, 2.0});
    CHECK(rbf_kernel(x, x, KernelConfig::fixed(0.7)) == doctest::Approx(1.0).epsilon(1e-15));

    // |x-y|^2 = 2 sigma^2  ->  exp(-1)
    double sigma = 1.3;
    Tensord a({1}, {0.0});
    Tensord b({1}, {std::sqrt(2.0) * sigma});
    CHECK(rbf_kernel(a, b, KernelConfig::fixed(sigma)) ==
          doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    CounterRng rng(1);
    for (int i = 0; i < 10; ++i) {
        Tensord u = rng.gaussian_tensor<double>({4});
        Tensord v = rng.gaussian_tensor<double>({4});
        auto cfg = KernelConfig::fixed(0.9);
        CHECK(rbf_kernel(u, v, cfg) == rbf_kernel(v, u, cfg));
        CHECK(rbf_kernel(u, v, cfg) > 0.0);
        CHECK(rbf_kernel(u, v, cfg) <= 1.0);
    }

    CHECK_THROWS(KernelConfig::fixed(0.0));
    CHECK_THROWS(rbf_kernel(x, Tensord({2}), KernelConfig::fixed(1.0)));
}

TEST_CASE("mmd2 of identical sample sets is exactly zero") {
    CounterRng rng(2);
    Tensord p = rng.gaussian_tensor<double>({20, 5});
    CHECK(mmd2(p, p, KernelConfig::fixed(1.0)) == 0.0);
    CHECK(mmd2(p, p, KernelConfig::median()) == 0.0);
}

TEST_CASE("mmd2 singleton closed form") {
    auto cfg = KernelConfig::fixed(1.0);
    for (double t : {0.0, 0.5, 1.0, 3.0, 10.0}) {
        Tensord p({1, 1}, {0.0});
        Tensord q({1, 1}, {t});
        double expected = 2.0 - 2.0 * std::exp(-t * t / 2.0);
        CHECK(mmd2(p, q, cfg) == doctest::Approx(expected).epsilon(1e-13));
    }
    // limits: 0 at t=0, toward 2 as t grows
    CHECK(mmd2(Tensord({1, 1}, {0.0}), Tensord({1, 1}, {100.0}), cfg) ==
          doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("mmd2 matches the naive double-loop oracle on random sets") {
    CounterRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Index m = 2 + Index(rng.uniform_index(49));
        Index n = 2 + Index(rng.uniform_index(49));
        Index d = 1 + Index(rng.uniform_index(6));
        Tensord p = rng.gaussian_tensor<double>({m, d});
        Tensord q = rng.gaussian_tensor<double>({n, d}, 1.3);
        double sigma = rng.uniform(0.3, 2.5);
        double fast = mmd2(p, q, KernelConfig::fixed(sigma));
        double ref = test::naive_mmd2(to_rows(p), to_rows(q), sigma);
        CHECK(std::abs(fast - ref) < 1e-12);
    }
}

TEST_CASE("mmd2 is non-negative and symmetric") {
    CounterRng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        Index m = 1 + Index(rng.uniform_index(12));
        Index n = 1 + Index(rng.uniform_index(12));
        Tensord p = rng.gaussian_tensor<double>({m, 3});
        Tensord q = rng.gaussian_tensor<double>({n, 3}, rng.uniform(0.5, 2.0));
        auto cfg = KernelConfig::fixed(rng.uniform(0.4, 2.0));
        double v = mmd2(p, q, cfg);
        CHECK(v >= 0.0);
        CHECK(v == mmd2(q, p, cfg));
    }
    CHECK_THROWS(mmd2(Tensord({0, 3}), Tensord({2, 3}), KernelConfig::fixed(1.0)));
}

TEST_CASE("mmd2 is invariant to permutations within each set") {
    CounterRng rng(5);
    Tensord p = rng.gaussian_tensor<double>({10, 4});
    Tensord q = rng.gaussian_tensor<double>({8, 4});
    auto cfg = KernelConfig::fixed(1.1);
    double base = mmd2(p, q, cfg);

    std::vector<Index> perm{7, 2, 9, 0, 4, 1, 8, 3, 6, 5};
    Tensord pp({10, 4});
    for (Index i = 0; i < 10; ++i)
        for (Index j = 0; j < 4; ++j) pp[i * 4 + j] = p[perm[size_t(i)] * 4 + j];
    CHECK(mmd2(pp, q, cfg) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("median-heuristic bandwidth makes mmd2 scale invariant") {
    CounterRng rng(6);
    Tensord p = rng.gaussian_tensor<double>({15, 3});
    Tensord q = rng.gaussian_tensor<double>({12, 3}, 1.4);
    double base = mmd2(p, q, KernelConfig::median());
    for (double c : {0.1, 3.0, 42.0}) {
        Tensord ps = p * c;
        Tensord qs = q * c;
        CHECK(mmd2(ps, qs, KernelConfig::median()) == doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("mmd2 gradients match finite differences (5 seeds)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CounterRng rng(seed * 41);
        Tensord p = rng.gaussian_tensor<double>({6, 3});
        Tensord q = rng.gaussian_tensor<double>({5, 3});
        auto cfg = KernelConfig::fixed(0.9);
        auto g = mmd2_with_grad(p, q, cfg);
        CHECK(g.value == doctest::Approx(mmd2(p, q, cfg)).epsilon(1e-14));

        Tensord dp_num = finite_diff_grad<double>(
            [&](const Tensord& pp) { return mmd2(pp, q, cfg); }, p);
        Tensord dq_num = finite_diff_grad<double>(
            [&](const Tensord& qq) { return mmd2(p, qq, cfg); }, q);
        CHECK(max_rel_error(g.d_p, dp_num) < 1e-5);
        CHECK(max_rel_error(g.d_q, dq_num) < 1e-5);
    }
}

TEST_CASE("mse_dis closed forms and error paths") {
    CounterRng rng(7);
    // identity adapters, equal features -> 0
    std::vector<Tensord> stu{rng.gaussian_tensor<double>({1, 3, 4, 4})};
    std::vector<Tensord> tea{stu[0]};
    std::vector<FeatureAdapter<double>> adapters;
    adapters.emplace_back(3, 3, rng);
    CHECK(mse_dis(stu, tea, adapters) == doctest::Approx(0.0).epsilon(1e-15));

    // one layer, a single-element map with unit difference -> 1
    std::vector<Tensord> s1{Tensord({1, 1, 1, 1}, {2.0})};
    std::vector<Tensord> t1{Tensord({1, 1, 1, 1}, {3.0})};
    std::vector<FeatureAdapter<double>> a1;
    a1.emplace_back(1, 1, rng);
    CHECK(mse_dis(s1, t1, a1) == doctest::Approx(1.0).epsilon(1e-15));

    std::vector<Tensord> bad{stu[0], stu[0]};
    CHECK_THROWS(mse_dis(bad, tea, adapters));  // layer list mismatch

    std::vector<Tensord> tshape{rng.gaussian_tensor<double>({1, 4, 4, 4})};
    CHECK_THROWS(mse_dis(stu, tshape, adapters));  // adapter output vs teacher shape
}

TEST_CASE("mse_dis adapter-weight gradients match finite differences (5 seeds)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CounterRng rng(seed * 53);
        std::vector<Tensord> stu{rng.gaussian_tensor<double>({1, 3, 4, 4}),
                                 rng.gaussian_tensor<double>({1, 2, 3, 3})};
        std::vector<Tensord> tea{rng.gaussian_tensor<double>({1, 4, 4, 4}),
                                 rng.gaussian_tensor<double>({1, 5, 3, 3})};
        std::vector<FeatureAdapter<double>> adapters;
        adapters.emplace_back(3, 4, rng);
        adapters.emplace_back(2, 5, rng);

        ParamList<double> params;
        adapters[0].collect(params, "a0");
        adapters[1].collect(params, "a1");
        auto loss = [&] { return mse_dis(stu, tea, adapters); };

        zero_grads(params);
        CounterRng sub(0);
        auto g = dis_loss_with_grad(stu, tea, adapters, KernelConfig::fixed(1.0), 0.0, sub);
        CHECK(g.parts.total == doctest::Approx(loss()).epsilon(1e-12));
        CHECK(test::check_param_grads(params, loss, rng) < 1e-4);
    }
}

TEST_CASE("dis_loss: lambda 0 degenerates to mse_dis, components add up") {
    CounterRng rng(8);
    std::vector<Tensord> stu{rng.gaussian_tensor<double>({2, 3, 4, 4})};
    std::vector<Tensord> tea{rng.gaussian_tensor<double>({2, 3, 4, 4})};
    std::vector<FeatureAdapter<double>> adapters;
    adapters.emplace_back(3, 3, rng);

    CounterRng sub(99);
    auto zero = dis_loss(stu, tea, adapters, KernelConfig::fixed(1.0), 0.0, sub);
    CHECK(zero.total == doctest::Approx(mse_dis(stu, tea, adapters)).epsilon(1e-13));

    // hand-assembled component sum: mse + 0.1 * mmd over all positions
    auto cfg = KernelConfig::fixed(0.8);
    CounterRng sub2(99);
    auto full = dis_loss(stu, tea, adapters, cfg, 0.1, sub2, /*max_samples=*/1 << 20);
    Tensord adapted = adapters[0].forward(stu[0]);
    double mmd_ref = mmd2(flatten_positions(adapted), flatten_positions(tea[0]), cfg);
    double mse_ref = mse_dis(stu, tea, adapters);
    CHECK(full.total == doctest::Approx(mse_ref + 0.1 * mmd_ref).epsilon(1e-12));

    // identical adapted features: both components vanish
    std::vector<Tensord> same{tea[0]};
    std::vector<FeatureAdapter<double>> id;
    id.emplace_back(3, 3, rng);
    CounterRng sub3(99);
    auto zero2 = dis_loss(same, tea, id, cfg, 0.1, sub3, 1 << 20);
    CHECK(zero2.total == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("dis_loss gradients (mse + mmd path) match finite differences") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        CounterRng rng(seed * 61);
        std::vector<Tensord> stu{rng.gaussian_tensor<double>({1, 2, 3, 3})};
        std::vector<Tensord> tea{rng.gaussian_tensor<double>({1, 3, 3, 3})};
        std::vector<FeatureAdapter<double>> adapters;
        adapters.emplace_back(2, 3, rng);

        auto cfg = KernelConfig::fixed(1.2);
        const double lambda = 0.1;
        // no subsampling, so the loss is a deterministic function of inputs
        auto loss_fn = [&] {
            CounterRng sub(7);
            return dis_loss(stu, tea, adapters, cfg, lambda, sub, 1 << 20).total;
        };

        ParamList<double> params;
        adapters[0].collect(params, "a");
        zero_grads(params);
        CounterRng sub(7);
        auto g = dis_loss_with_grad(stu, tea, adapters, cfg, lambda, sub, 1 << 20);
        CHECK(g.parts.total == doctest::Approx(loss_fn()).epsilon(1e-12));
        CHECK(test::check_param_grads(params, loss_fn, rng) < 1e-4);

        // gradient w.r.t. the raw student features
        Tensord d_num = finite_diff_grad<double>(
            [&](const Tensord& s) {
                std::vector<Tensord> stu2{s};
                CounterRng sub2(7);
                return dis_loss(stu2, tea, adapters, cfg, lambda, sub2, 1 << 20).total;
            },
            stu[0]);
        CHECK(max_rel_error(g.d_student[0], d_num) < 1e-4);
    }
}

TEST_CASE("dis_loss decreases over a 512-iteration window on a toy problem") {
    CounterRng rng(123);
    Tensord teacher_feat = rng.gaussian_tensor<double>({1, 3, 6, 6});
    Tensord student_feat = rng.gaussian_tensor<double>({1, 3, 6, 6}, 2.0);
    std::vector<FeatureAdapter<double>> adapters;
    adapters.emplace_back(3, 3, rng);

    ParamList<double> params;
    adapters[0].collect(params, "a");
    Tensord d_feat_grad(student_feat.shape());
    params.push_back({"student_feat", &student_feat, &d_feat_grad});
    SgdMomentum<double> opt(0.002);

    auto cfg = KernelConfig::median();
    std::vector<double> curve;
    for (int iter = 0; iter < 512; ++iter) {
        std::vector<Tensord> stu{student_feat};
        std::vector<Tensord> tea{teacher_feat};
        zero_grads(params);
        CounterRng sub(1000 + std::uint64_t(iter));
        auto g = dis_loss_with_grad(stu, tea, adapters, cfg, 0.1, sub, 1 << 20);
        d_feat_grad += g.d_student[0];
        opt.step(params);
        curve.push_back(g.parts.total);
    }
    // trend over windowed means at fixed checkpoints
    auto window_mean = [&](size_t start) {
        double acc = 0;
        for (size_t i = start; i < start + 32; ++i) acc += curve[i];
        return acc / 32;
    };
    double w0 = window_mean(0), w1 = window_mean(160), w2 = window_mean(320), w3 = window_mean(480);
    CHECK(w1 <= w0);
    CHECK(w2 <= w1);
    CHECK(w3 <= w2);
    CHECK(w3 < 0.05 * w0);
}

TEST_CASE("subsample_rows is deterministic, capped, and duplicate-free") {
    CounterRng a(5), b(5);
    auto r1 = subsample_rows(100, 10, a);
    auto r2 = subsample_rows(100, 10, b);
    CHECK(r1 == r2);
    CHECK(r1.size() == 10);
    std::sort(r1.begin(), r1.end());
    CHECK(std::adjacent_find(r1.begin(), r1.end()) == r1.end());

    CounterRng c(5);
    auto all = subsample_rows(7, 10, c);
    CHECK(all.size() == 7);
}
