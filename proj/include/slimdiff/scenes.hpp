#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace slimdiff {

struct SceneParams {
    Index hr_size = 64;
    Index scale = 4;
    int min_stripes = 1, max_stripes = 3;
    int min_rects = 2, max_rects = 5;
    double optics_sigma = 0.6;  // fixed smoothing of the composed scene
    double blur_sigma_lo = 0.5, blur_sigma_hi = 2.0;
    double noise_sigma_max = 0.02;
};

/// One generated scene: homogeneous-gradient background, oriented stripes,
/// sparse rectangles; the degraded counterpart; and the generator-known mask
/// of textured (stripe/rectangle) pixels.
struct SynthScene {
    Tensord hr;    // (1,1,H,W), values in [0,1]
    Tensord lr;    // (1,1,H/scale,W/scale), values in [0,1]
    Tensord mask;  // (1,1,H,W), 1 on stripes/rectangles
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    double blur_sigma = 0;
    double noise_sigma = 0;
};

namespace detail {

inline void clip01(Tensord& t) {
    for (Index i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], 0.0, 1.0);
}

}  // namespace detail

inline SynthScene gen_scene(std::uint64_t seed, std::uint64_t index, const SceneParams& p) {
    CounterRng rng(seed, /*stream=*/0x5C3 + index);
    const Index H = p.hr_size, W = p.hr_size;
    SynthScene scene;
    scene.seed = seed;
    scene.index = index;
    scene.hr = Tensord({1, 1, H, W});
    scene.mask = Tensord({1, 1, H, W});

    // smooth background: base level, gentle plane, one low-frequency bump
    double base = rng.uniform(0.3, 0.7);
    double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
    double amp = rng.uniform(-0.12, 0.12);
    double phx = rng.uniform(0, 2 * M_PI), phy = rng.uniform(0, 2 * M_PI);
    for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
            double v = base + gx * double(j) / double(W) + gy * double(i) / double(H) +
                       amp * std::cos(2 * M_PI * double(j) / double(W) + phx) *
                           std::cos(2 * M_PI * double(i) / double(H) + phy);
            scene.hr.at4(0, 0, i, j) = v;
        }

    // oriented stripes spanning the image (roads)
    int n_stripes = p.min_stripes + int(rng.uniform_index(std::uint64_t(p.max_stripes - p.min_stripes + 1)));
    for (int s = 0; s < n_stripes; ++s) {
        double theta = rng.uniform(0, M_PI);
        double cx = rng.uniform(0, double(W)), cy = rng.uniform(0, double(H));
        double half_w = rng.uniform(0.8, 2.0);
        double delta = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 0.45);
        double nx = -std::sin(theta), ny = std::cos(theta);  // unit normal to the stripe
        for (Index i = 0; i < H; ++i)
            for (Index j = 0; j < W; ++j) {
                double dist = std::abs((double(j) - cx) * nx + (double(i) - cy) * ny);
                if (dist <= half_w) {
                    scene.hr.at4(0, 0, i, j) += delta;
                    scene.mask.at4(0, 0, i, j) = 1.0;
                }
            }
    }

    // sparse rectangles (buildings)
    int n_rects = p.min_rects + int(rng.uniform_index(std::uint64_t(p.max_rects - p.min_rects + 1)));
    for (int r = 0; r < n_rects; ++r) {
        Index rw = 3 + Index(rng.uniform_index(8));
        Index rh = 3 + Index(rng.uniform_index(8));
        Index x0 = Index(rng.uniform_index(std::uint64_t(Index(std::max<Index>(1, W - rw)))));
        Index y0 = Index(rng.uniform_index(std::uint64_t(Index(std::max<Index>(1, H - rh)))));
        double delta = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 0.45);
        for (Index i = y0; i < std::min(H, y0 + rh); ++i)
            for (Index j = x0; j < std::min(W, x0 + rw); ++j) {
                scene.hr.at4(0, 0, i, j) += delta;
                scene.mask.at4(0, 0, i, j) = 1.0;
            }
    }
    if (p.optics_sigma > 0) scene.hr = gaussian_blur(scene.hr, p.optics_sigma);
    detail::clip01(scene.hr);

    // degradation: Gaussian blur, bicubic 1/scale, additive Gaussian noise
    scene.blur_sigma = rng.uniform(p.blur_sigma_lo, p.blur_sigma_hi);
    Tensord blurred = gaussian_blur(scene.hr, scene.blur_sigma);
    scene.lr = bicubic_resize(blurred, H / p.scale, W / p.scale);
    scene.noise_sigma = rng.uniform(0.0, p.noise_sigma_max);
    for (Index i = 0; i < scene.lr.size(); ++i)
        scene.lr[i] += scene.noise_sigma * rng.gaussian();
    detail::clip01(scene.lr);
    return scene;
}

inline std::vector<SynthScene> gen_scenes(int count, std::uint64_t seed, const SceneParams& p) {
    if (count < 1) throw std::invalid_argument("gen_scenes: count must be >= 1");
    std::vector<SynthScene> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) scenes.push_back(gen_scene(seed, std::uint64_t(i), p));
    return scenes;
}

}  // namespace slimdiff
