#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/unet.hpp"
#include "slimdiff/vae.hpp"

#include <cstdint>
#include <stdexcept>

namespace slimdiff {

/// Folds two back-to-back plain convolutions (y = b(a(x)), stride 1,
/// groups 1, no nonlinearity in between) into one kernel of size
/// (k_a + k_b - 1), biases included. The composition is exact whenever the
/// second conv never reads zero padding of the intermediate, i.e. when
/// b.pad == 0 or a is a bias-free 1x1; the fused kernel carries
/// pad_a + pad_b either way.
template <typename Scalar>
ConvKernel<Scalar> fuse_convs(const ConvKernel<Scalar>& a, const ConvKernel<Scalar>& b) {
    if (a.groups != 1 || b.groups != 1)
        throw std::invalid_argument("fuse_convs: grouped convs unsupported");
    if (a.stride != 1 || b.stride != 1)
        throw std::invalid_argument("fuse_convs: strided convs unsupported");
    if (b.c_in() != a.c_out())
        throw std::invalid_argument("fuse_convs: channel chain mismatch");

    const Index kh = a.kh() + b.kh() - 1;
    const Index kw = a.kw() + b.kw() - 1;
    const bool bias = a.has_bias || b.has_bias;
    ConvKernel<Scalar> fused(b.c_out(), a.c_in(), kh, kw, bias, 1, 1, a.pad_h + b.pad_h,
                             a.pad_w + b.pad_w);

    for (Index o = 0; o < b.c_out(); ++o)
        for (Index i = 0; i < a.c_in(); ++i)
            for (Index m = 0; m < a.c_out(); ++m)
                for (Index bp = 0; bp < b.kh(); ++bp)
                    for (Index bq = 0; bq < b.kw(); ++bq) {
                        Scalar wb = b.weights.at4(o, m, bp, bq);
                        if (wb == Scalar(0)) continue;
                        for (Index ap = 0; ap < a.kh(); ++ap)
                            for (Index aq = 0; aq < a.kw(); ++aq)
                                fused.weights.at4(o, i, ap + bp, aq + bq) +=
                                    a.weights.at4(m, i, ap, aq) * wb;
                    }

    if (bias) {
        for (Index o = 0; o < b.c_out(); ++o) {
            Scalar acc = b.has_bias ? b.bias[o] : Scalar(0);
            if (a.has_bias)
                for (Index m = 0; m < a.c_out(); ++m) {
                    Scalar wsum = 0;
                    for (Index p = 0; p < b.kh(); ++p)
                        for (Index q = 0; q < b.kw(); ++q) wsum += b.weights.at4(o, m, p, q);
                    acc += a.bias[m] * wsum;
                }
            fused.bias[o] = acc;
        }
    }
    return fused;
}

/// Parameter/MAC split between the denoiser and the autoencoder at a given
/// image resolution, with the derived percentage shares.
struct ComplexityReport {
    std::int64_t params_unet = 0;
    std::int64_t params_vae = 0;
    std::int64_t macs_unet = 0;
    std::int64_t macs_vae = 0;
    Index image_resolution = 0;
    Index latent_resolution = 0;

    std::int64_t params_total() const { return params_unet + params_vae; }
    std::int64_t macs_total() const { return macs_unet + macs_vae; }
    double param_share_unet() const { return 100.0 * double(params_unet) / double(params_total()); }
    double param_share_vae() const { return 100.0 * double(params_vae) / double(params_total()); }
    double mac_share_unet() const { return 100.0 * double(macs_unet) / double(macs_total()); }
    double mac_share_vae() const { return 100.0 * double(macs_vae) / double(macs_total()); }
};

inline ComplexityReport complexity_report(const ToyUNetSpec& unet, const ToyVAESpec& vae,
                                          Index image_resolution) {
    unet.validate();
    vae.validate();
    if (image_resolution <= 0 || image_resolution % vae.reduction() != 0)
        throw std::invalid_argument("complexity_report: resolution incompatible with reduction");
    ComplexityReport r;
    r.image_resolution = image_resolution;
    r.latent_resolution = image_resolution / vae.reduction();
    r.params_unet = unet_param_count(unet);
    r.params_vae = vae_param_count(vae);
    r.macs_unet = unet_macs(unet, r.latent_resolution, r.latent_resolution);
    r.macs_vae = vae_macs(vae, image_resolution, image_resolution);
    return r;
}

}  // namespace slimdiff
