#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slimdiff/metrics.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/scenes.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace slimdiff;

namespace {

// Naive separable 2-d DFT power spectrum, the spectral oracle for the
// generator's homogeneity property.
std::vector<double> power_spectrum(const Tensord& img) {
    const Index H = img.extent(2), W = img.extent(3);
    std::vector<std::complex<double>> rows(size_t(H * W)), full(size_t(H * W));
    for (Index u = 0; u < H; ++u)
        for (Index k = 0; k < W; ++k) {
            std::complex<double> acc = 0;
            for (Index j = 0; j < W; ++j) {
                double ang = -2 * M_PI * double(k) * double(j) / double(W);
                acc += img.at4(0, 0, u, j) * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            rows[size_t(u * W + k)] = acc;
        }
    for (Index k2 = 0; k2 < H; ++k2)
        for (Index k = 0; k < W; ++k) {
            std::complex<double> acc = 0;
            for (Index u = 0; u < H; ++u) {
                double ang = -2 * M_PI * double(k2) * double(u) / double(H);
                acc += rows[size_t(u * W + k)] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            full[size_t(k2 * W + k)] = acc;
        }
    std::vector<double> power(size_t(H * W));
    for (size_t i = 0; i < power.size(); ++i) power[i] = std::norm(full[i]);
    return power;
}

}  // namespace

TEST_CASE("gen_scenes determinism: fixed seed reproduces byte-identical scenes") {
    SceneParams p;
    auto a = gen_scenes(4, 42, p);
    auto b = gen_scenes(4, 42, p);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        for (Index k = 0; k < a[i].hr.size(); ++k) CHECK(a[i].hr[k] == b[i].hr[k]);
        for (Index k = 0; k < a[i].lr.size(); ++k) CHECK(a[i].lr[k] == b[i].lr[k]);
        for (Index k = 0; k < a[i].mask.size(); ++k) CHECK(a[i].mask[k] == b[i].mask[k]);
    }
    auto c = gen_scenes(2, 43, p);
    bool differs = false;
    for (Index k = 0; k < c[0].hr.size(); ++k) differs |= (c[0].hr[k] != a[0].hr[k]);
    CHECK(differs);
}

TEST_CASE("gen_scenes contracts: dims, value range, mask coverage") {
    SceneParams p;
    auto scenes = gen_scenes(6, 7, p);
    for (const auto& s : scenes) {
        CHECK(s.hr.extent(2) == 64);
        CHECK(s.lr.extent(2) == 16);  // hr dims / 4, exactly
        CHECK(s.lr.extent(3) == s.hr.extent(3) / p.scale);
        CHECK(s.hr.min() >= 0.0);
        CHECK(s.hr.max() <= 1.0);
        CHECK(s.lr.min() >= 0.0);
        CHECK(s.lr.max() <= 1.0);
        double mask_frac = s.mask.mean();
        CHECK(mask_frac > 0.01);
        CHECK(mask_frac < 0.7);
    }
    CHECK_THROWS(gen_scenes(0, 1, p));
}

TEST_CASE("scene spectrum concentrates below the Nyquist/4 band") {
    SceneParams p;
    auto scenes = gen_scenes(6, 11, p);
    for (const auto& s : scenes) {
        auto power = power_spectrum(s.hr);
        const Index H = s.hr.extent(2), W = s.hr.extent(3);
        double low = 0, total = 0;
        for (Index u = 0; u < H; ++u)
            for (Index v = 0; v < W; ++v) {
                if (u == 0 && v == 0) continue;  // homogeneity of the AC part
                double fu = double(u <= H / 2 ? u : u - H) / double(H);
                double fv = double(v <= W / 2 ? v : v - W) / double(W);
                double val = power[size_t(u * W + v)];
                total += val;
                if (std::sqrt(fu * fu + fv * fv) <= 0.125) low += val;  // Nyquist/4 = 0.125 cyc/px
            }
        CHECK(low / total >= 0.6);
    }
}

TEST_CASE("psnr closed forms and cap") {
    Tensord a = Tensord::full({1, 1, 8, 8}, 0.5);
    CHECK(psnr(a, a) == 100.0);

    Tensord b = a;
    for (Index i = 0; i < b.size(); ++i) b[i] += 0.1;  // MSE = 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

    CHECK_THROWS(psnr(a, Tensord({1, 1, 4, 4})));
}

TEST_CASE("ssim: identity is 1, negation of a mid-gray-free pattern is low") {
    CounterRng rng(3);
    // checkerboard of 0.2 / 0.8 patches (no 0.5 values anywhere)
    Tensord img({1, 1, 32, 32});
    for (Index i = 0; i < 32; ++i)
        for (Index j = 0; j < 32; ++j)
            img.at4(0, 0, i, j) = ((i / 4 + j / 4) % 2 == 0) ? 0.2 : 0.8;

    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));

    Tensord neg = img;
    for (Index i = 0; i < neg.size(); ++i) neg[i] = 1.0 - neg[i];
    CHECK(ssim(img, neg) < 0.1);

    // noise degrades ssim monotonically-ish
    Tensord noisy = img;
    for (Index i = 0; i < noisy.size(); ++i) noisy[i] += 0.05 * rng.gaussian();
    double s_noisy = ssim(img, noisy);
    CHECK(s_noisy < 1.0);
    CHECK(s_noisy > 0.3);

    CHECK_THROWS(ssim(Tensord({1, 1, 8, 8}), Tensord({1, 1, 8, 8})));  // below window size
}

TEST_CASE("compute_metrics bundles psnr and ssim") {
    SceneParams p;
    auto s = gen_scene(5, 0, p);
    Metrics m = compute_metrics(s.hr, s.hr);
    CHECK(m.psnr == 100.0);
    CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-12));

    Tensord up = bicubic_resize(s.lr, 64, 64);
    Metrics worse = compute_metrics(up, s.hr);
    CHECK(worse.psnr < 40.0);
    CHECK(worse.psnr > 5.0);
    CHECK(worse.ssim < 1.0);
}
