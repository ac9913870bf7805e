#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/layers.hpp"
#include "slimdiff/ops.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdiff {

/// Toy autoencoder description. widths[0] is the stem width; every further
/// entry adds a stride-2 stage, so spatial reduction is 2^(widths.size()-1).
/// The encoder ends in a bias-free 1x1 bottleneck conv to latent_channels;
/// the decoder starts with its 1x1 mirror. Those two are the fusion
/// candidates at the network boundary.
struct ToyVAESpec {
    Index in_channels = 1;
    std::vector<Index> widths = {12, 24};
    Index latent_channels = 4;

    Index reduction() const { return Index(1) << (widths.size() - 1); }
    Index trunk_channels() const { return widths.back(); }

    void validate() const {
        if (widths.empty()) throw std::invalid_argument("ToyVAESpec: no widths");
        for (Index w : widths)
            if (w <= 0) throw std::invalid_argument("ToyVAESpec: non-positive width");
        if (in_channels <= 0 || latent_channels <= 0)
            throw std::invalid_argument("ToyVAESpec: bad channel counts");
        if (latent_channels >= widths.back())
            throw std::invalid_argument("ToyVAESpec: latent must be narrower than the trunk");
    }
};

inline std::int64_t vae_param_count(const ToyVAESpec& s) {
    s.validate();
    std::int64_t total = 0;
    total += 9 * s.in_channels * s.widths[0] + s.widths[0];  // stem
    for (size_t k = 1; k < s.widths.size(); ++k)
        total += 9 * s.widths[k - 1] * s.widths[k] + s.widths[k];  // encoder downs
    total += s.trunk_channels() * s.latent_channels;               // enc_last (1x1, no bias)
    total += s.latent_channels * s.trunk_channels() + s.trunk_channels();  // dec_first
    for (size_t k = s.widths.size(); k-- > 1;)
        total += 9 * s.widths[k] * s.widths[k - 1] + s.widths[k - 1];  // decoder ups
    total += 9 * s.widths[0] * s.in_channels + s.in_channels;          // out conv
    return total;
}

/// MACs for encode+decode of one image at (h, w).
inline std::int64_t vae_macs(const ToyVAESpec& s, Index h, Index w) {
    s.validate();
    std::int64_t total = 0;
    total += conv_macs(s.in_channels, s.widths[0], 3, 3, h, w);
    Index ch = h, cw = w;
    for (size_t k = 1; k < s.widths.size(); ++k) {
        ch /= 2;
        cw /= 2;
        total += conv_macs(s.widths[k - 1], s.widths[k], 3, 3, ch, cw);
    }
    total += conv_macs(s.trunk_channels(), s.latent_channels, 1, 1, ch, cw);  // enc_last
    total += conv_macs(s.latent_channels, s.trunk_channels(), 1, 1, ch, cw);  // dec_first
    for (size_t k = s.widths.size(); k-- > 1;) {
        ch *= 2;
        cw *= 2;
        total += conv_macs(s.widths[k], s.widths[k - 1], 3, 3, ch, cw);
    }
    total += conv_macs(s.widths[0], s.in_channels, 3, 3, h, w);
    return total;
}

template <typename Scalar>
class ToyVAE {
public:
    struct EncCache {
        Tensor<Scalar> x;
        std::vector<Tensor<Scalar>> pre;   // pre-activation per trunk conv
        std::vector<Tensor<Scalar>> post;  // post-activation per trunk conv
        Tensor<Scalar> trunk_out;          // X1
    };
    struct DecCache {
        Tensor<Scalar> z;
        Tensor<Scalar> first_pre;
        std::vector<Tensor<Scalar>> pre;
        std::vector<Tensor<Scalar>> post;
        std::vector<Tensor<Scalar>> upsampled;
        Tensor<Scalar> last_in;
    };

    ToyVAE() = default;

    ToyVAE(ToyVAESpec spec, CounterRng& rng) : spec_(std::move(spec)) {
        spec_.validate();
        const auto& w = spec_.widths;
        enc_stem_ = ConvLayer<Scalar>(w[0], spec_.in_channels, 3, 3);
        enc_stem_.init(rng);
        for (size_t k = 1; k < w.size(); ++k) {
            ConvLayer<Scalar> down(w[k], w[k - 1], 3, 3, true, 1, 2, 1, 1);
            down.init(rng);
            enc_down_.push_back(std::move(down));
        }
        enc_last_ = ConvLayer<Scalar>(spec_.latent_channels, w.back(), 1, 1, /*bias=*/false);
        enc_last_.init(rng);

        dec_first_ = ConvLayer<Scalar>(w.back(), spec_.latent_channels, 1, 1);
        dec_first_.init(rng);
        for (size_t k = w.size(); k-- > 1;) {
            ConvLayer<Scalar> up(w[k - 1], w[k], 3, 3);
            up.init(rng);
            dec_up_.push_back(std::move(up));
        }
        dec_out_ = ConvLayer<Scalar>(spec_.in_channels, w[0], 3, 3);
        dec_out_.init(rng);
    }

    const ToyVAESpec& spec() const { return spec_; }
    const ConvLayer<Scalar>& enc_last() const { return enc_last_; }
    const ConvLayer<Scalar>& dec_first() const { return dec_first_; }

    // image -> pre-bottleneck trunk features X1
    Tensor<Scalar> encode_trunk(const Tensor<Scalar>& x, EncCache* c = nullptr) const {
        if (c) {
            *c = EncCache{};
            c->x = x;
        }
        Tensor<Scalar> pre = enc_stem_.forward(x);
        Tensor<Scalar> h = activate(pre, Activation::silu);
        if (c) {
            c->pre.push_back(pre);
            c->post.push_back(h);
        }
        for (const auto& down : enc_down_) {
            pre = down.forward(h);
            h = activate(pre, Activation::silu);
            if (c) {
                c->pre.push_back(pre);
                c->post.push_back(h);
            }
        }
        if (c) c->trunk_out = h;
        return h;
    }

    Tensor<Scalar> encode(const Tensor<Scalar>& x, EncCache* c = nullptr) const {
        return enc_last_.forward(encode_trunk(x, c));
    }

    // latent -> image
    Tensor<Scalar> decode(const Tensor<Scalar>& z, DecCache* c = nullptr) const {
        if (c) {
            *c = DecCache{};
            c->z = z;
        }
        Tensor<Scalar> pre = dec_first_.forward(z);
        if (c) c->first_pre = pre;
        return decode_trunk(activate(pre, Activation::silu), c);
    }

    // trunk-space features -> image (the fused student path enters here)
    Tensor<Scalar> decode_trunk(const Tensor<Scalar>& h_in, DecCache* c = nullptr) const {
        Tensor<Scalar> h = h_in;
        for (const auto& up : dec_up_) {
            Tensor<Scalar> u = nearest_upsample2(h);
            Tensor<Scalar> pre = up.forward(u);
            h = activate(pre, Activation::silu);
            if (c) {
                c->upsampled.push_back(u);
                c->pre.push_back(pre);
                c->post.push_back(h);
            }
        }
        if (c) c->last_in = h;
        return dec_out_.forward(h);
    }

    // dL/d(image) -> dL/d(trunk input of the decoder)
    Tensor<Scalar> decode_trunk_backward(const DecCache& c, const Tensor<Scalar>& dy) {
        Tensor<Scalar> d = dec_out_.backward(c.last_in, dy);
        for (size_t k = dec_up_.size(); k-- > 0;) {
            d = activate_backward(c.pre[k], d, Activation::silu);
            d = dec_up_[k].backward(c.upsampled[k], d);
            d = nearest_upsample2_backward(d);
        }
        return d;
    }

    Tensor<Scalar> decode_backward(const DecCache& c, const Tensor<Scalar>& dy) {
        Tensor<Scalar> d = decode_trunk_backward(c, dy);
        d = activate_backward(c.first_pre, d, Activation::silu);
        return dec_first_.backward(c.z, d);
    }

    // dL/d(trunk features X1) -> dL/d(image input)
    Tensor<Scalar> encode_trunk_backward(const EncCache& c, const Tensor<Scalar>& d_trunk) {
        Tensor<Scalar> d = d_trunk;
        for (size_t k = enc_down_.size(); k-- > 0;) {
            d = activate_backward(c.pre[k + 1], d, Activation::silu);
            d = enc_down_[k].backward(c.post[k], d);
        }
        d = activate_backward(c.pre[0], d, Activation::silu);
        return enc_stem_.backward(c.x, d);
    }

    Tensor<Scalar> encode_backward(const EncCache& c, const Tensor<Scalar>& dz) {
        Tensor<Scalar> d_trunk = enc_last_.backward(c.trunk_out, dz);
        return encode_trunk_backward(c, d_trunk);
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        enc_stem_.collect(out, prefix + ".enc_stem");
        for (size_t k = 0; k < enc_down_.size(); ++k)
            enc_down_[k].collect(out, prefix + ".enc_down" + std::to_string(k));
        enc_last_.collect(out, prefix + ".enc_last");
        dec_first_.collect(out, prefix + ".dec_first");
        for (size_t k = 0; k < dec_up_.size(); ++k)
            dec_up_[k].collect(out, prefix + ".dec_up" + std::to_string(k));
        dec_out_.collect(out, prefix + ".dec_out");
    }

    Index param_count() {
        ParamList<Scalar> params;
        collect(params, "vae");
        return total_param_count(params);
    }

private:
    ToyVAESpec spec_;
    ConvLayer<Scalar> enc_stem_, enc_last_, dec_first_, dec_out_;
    std::vector<ConvLayer<Scalar>> enc_down_, dec_up_;
};

}  // namespace slimdiff
