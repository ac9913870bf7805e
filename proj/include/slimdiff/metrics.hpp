#pragma once

#include "slimdiff/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace slimdiff {

struct Metrics {
    double psnr = 0;
    double ssim = 0;
};

/// PSNR in dB over [0,1] data, capped at 100 dB once MSE drops below 1e-10.
template <typename Scalar>
double psnr(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = double((pred - gt).array().square().sum()) / double(pred.size());
    if (mse < 1e-10) return 100.0;
    return -10.0 * std::log10(mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    // 11-tap Gaussian, sigma 1.5, normalized
    static const std::vector<double> w = [] {
        std::vector<double> v(11);
        double norm = 0;
        for (int i = 0; i < 11; ++i) {
            double x = double(i - 5);
            v[size_t(i)] = std::exp(-x * x / (2 * 1.5 * 1.5));
            norm += v[size_t(i)];
        }
        for (auto& e : v) e /= norm;
        return v;
    }();
    return w;
}

// separable valid-mode filtering of one (H,W) plane
template <typename Scalar>
std::vector<double> filter_valid(const Scalar* img, Index h, Index w, Index& oh, Index& ow) {
    const auto& win = ssim_window();
    const Index r = 5;
    oh = h - 2 * r;
    ow = w - 2 * r;
    std::vector<double> tmp(size_t(h * ow)), out(size_t(oh * ow));
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < ow; ++j) {
            double acc = 0;
            for (Index t = 0; t < 11; ++t) acc += win[size_t(t)] * double(img[i * w + j + t]);
            tmp[size_t(i * ow + j)] = acc;
        }
    for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
            double acc = 0;
            for (Index t = 0; t < 11; ++t) acc += win[size_t(t)] * tmp[size_t((i + t) * ow + j)];
            out[size_t(i * ow + j)] = acc;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, unit dynamic range, valid-region statistics.
template <typename Scalar>
double ssim(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("ssim: shape mismatch");
    Tensor<Scalar> a = pred.rank() == 2 ? pred.reshaped({1, 1, pred.extent(0), pred.extent(1)}) : pred;
    Tensor<Scalar> b = gt.rank() == 2 ? gt.reshaped({1, 1, gt.extent(0), gt.extent(1)}) : gt;
    if (a.rank() != 4) throw std::invalid_argument("ssim: need 2-d or 4-d input");
    const Index B = a.extent(0), C = a.extent(1), H = a.extent(2), W = a.extent(3);
    if (H < 11 || W < 11) throw std::invalid_argument("ssim: image smaller than the window");

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    Index planes = 0;
    std::vector<double> x2(size_t(H * W)), y2(size_t(H * W)), xy(size_t(H * W));
    for (Index n = 0; n < B; ++n)
        for (Index c = 0; c < C; ++c) {
            const Scalar* x = a.data() + (n * C + c) * H * W;
            const Scalar* y = b.data() + (n * C + c) * H * W;
            for (Index i = 0; i < H * W; ++i) {
                x2[size_t(i)] = double(x[i]) * double(x[i]);
                y2[size_t(i)] = double(y[i]) * double(y[i]);
                xy[size_t(i)] = double(x[i]) * double(y[i]);
            }
            Index oh = 0, ow = 0;
            auto mx = detail::filter_valid(x, H, W, oh, ow);
            auto my = detail::filter_valid(y, H, W, oh, ow);
            auto mxx = detail::filter_valid(x2.data(), H, W, oh, ow);
            auto myy = detail::filter_valid(y2.data(), H, W, oh, ow);
            auto mxy = detail::filter_valid(xy.data(), H, W, oh, ow);
            double acc = 0;
            for (Index i = 0; i < oh * ow; ++i) {
                double sx = mxx[size_t(i)] - mx[size_t(i)] * mx[size_t(i)];
                double sy = myy[size_t(i)] - my[size_t(i)] * my[size_t(i)];
                double sxy = mxy[size_t(i)] - mx[size_t(i)] * my[size_t(i)];
                double num = (2 * mx[size_t(i)] * my[size_t(i)] + c1) * (2 * sxy + c2);
                double den = (mx[size_t(i)] * mx[size_t(i)] + my[size_t(i)] * my[size_t(i)] + c1) *
                             (sx + sy + c2);
                acc += num / den;
            }
            total += acc / double(oh * ow);
            ++planes;
        }
    return total / double(planes);
}

template <typename Scalar>
Metrics compute_metrics(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
    return {psnr(pred, gt), ssim(pred, gt)};
}

}  // namespace slimdiff
