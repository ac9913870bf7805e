#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/layers.hpp"
#include "slimdiff/lightops.hpp"
#include "slimdiff/ops.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdiff {

enum class Operator { standard, dsc, fsc };
enum class AttentionKind { none, self_attention, qgam };

inline Operator operator_from_string(const std::string& s) {
    if (s == "standard") return Operator::standard;
    if (s == "dsc") return Operator::dsc;
    if (s == "fsc") return Operator::fsc;
    throw std::invalid_argument("unknown operator: " + s);
}

inline std::string to_string(Operator op) {
    switch (op) {
        case Operator::standard: return "standard";
        case Operator::dsc: return "dsc";
        case Operator::fsc: return "fsc";
    }
    return "?";
}

inline AttentionKind attention_from_string(const std::string& s) {
    if (s == "none") return AttentionKind::none;
    if (s == "self") return AttentionKind::self_attention;
    if (s == "qgam") return AttentionKind::qgam;
    throw std::invalid_argument("unknown attention kind: " + s);
}

inline std::string to_string(AttentionKind a) {
    switch (a) {
        case AttentionKind::none: return "none";
        case AttentionKind::self_attention: return "self";
        case AttentionKind::qgam: return "qgam";
    }
    return "?";
}

struct LevelSpec {
    Index width = 16;
    int blocks = 1;
    Operator op = Operator::standard;
    AttentionKind attention = AttentionKind::none;
    Index qgam_queries = 64;
};

/// Layered encoder/decoder description. Level 0 runs at latent resolution,
/// each deeper level at half the previous. The deepest level turns around
/// through a single mid ResBlock, which doubles as the bridge that replaces
/// removed levels after pruning.
struct ToyUNetSpec {
    std::vector<LevelSpec> levels;
    int deepest_removed = 0;
    bool time_conditioning = true;
    Index in_channels = 4;
    Index out_channels = 4;
    Index time_embed_dim = 32;  // sinusoid feature count
    Index time_hidden = 32;     // MLP width and per-block projection input

    void validate() const {
        if (levels.empty()) throw std::invalid_argument("ToyUNetSpec: no levels");
        for (const auto& l : levels) {
            if (l.width <= 0) throw std::invalid_argument("ToyUNetSpec: non-positive width");
            if (l.blocks < 1) throw std::invalid_argument("ToyUNetSpec: blocks must be >= 1");
            if (l.attention == AttentionKind::qgam && l.qgam_queries < 1)
                throw std::invalid_argument("ToyUNetSpec: qgam_queries must be >= 1");
        }
        if (deepest_removed < 0) throw std::invalid_argument("ToyUNetSpec: negative deepest_removed");
        if (in_channels <= 0 || out_channels <= 0)
            throw std::invalid_argument("ToyUNetSpec: channel counts must be positive");
        if (time_conditioning && (time_embed_dim < 2 || time_hidden < 1))
            throw std::invalid_argument("ToyUNetSpec: bad time embedding dims");
    }

    bool has_bridge() const { return deepest_removed >= 1; }
};

/// Removes the deepest levels and bridges the deepest retained level with the
/// single mid ResBlock; the retained levels are untouched.
inline ToyUNetSpec semantic_prune(const ToyUNetSpec& spec, int levels_to_remove) {
    if (levels_to_remove < 0) throw std::invalid_argument("semantic_prune: negative count");
    if (levels_to_remove >= static_cast<int>(spec.levels.size()))
        throw std::invalid_argument("semantic_prune: cannot remove all levels");
    ToyUNetSpec pruned = spec;
    pruned.levels.resize(spec.levels.size() - static_cast<size_t>(levels_to_remove));
    pruned.deepest_removed = spec.deepest_removed + levels_to_remove;
    return pruned;
}

namespace detail {

inline std::int64_t block_param_count(const LevelSpec& l, bool time, Index time_hidden) {
    std::int64_t w = l.width;
    std::int64_t params = 0;
    switch (l.op) {
        case Operator::standard: params += 2 * (9 * w * w + w); break;
        case Operator::dsc: params += dsc_param_count(w); break;
        case Operator::fsc: params += fsc_param_count(w); break;
    }
    if (time) params += time_hidden * w + w;
    switch (l.attention) {
        case AttentionKind::none: break;
        case AttentionKind::self_attention: params += 4 * w * w; break;
        case AttentionKind::qgam: params += l.qgam_queries * w + 6 * w * w; break;
    }
    return params;
}

}  // namespace detail

/// Closed-form parameter count for a spec; the oracle the built network is
/// checked against.
inline std::int64_t unet_param_count(const ToyUNetSpec& spec) {
    spec.validate();
    const auto& L = spec.levels;
    const bool time = spec.time_conditioning;
    std::int64_t total = 0;
    total += 9 * spec.in_channels * L.front().width + L.front().width;  // stem
    for (size_t i = 0; i < L.size(); ++i) {
        total += L[i].blocks * detail::block_param_count(L[i], time, spec.time_hidden);  // encoder
        if (i + 1 < L.size()) {
            total += 9 * L[i].width * L[i + 1].width + L[i + 1].width;  // down
            total += 9 * L[i + 1].width * L[i].width + L[i].width;      // up
            // decoder blocks mirror the encoder spec at this level
            total += L[i].blocks * detail::block_param_count(L[i], time, spec.time_hidden);
        }
    }
    // mid ResBlock at the deepest width (standard operator, no attention)
    LevelSpec mid{L.back().width, 1, Operator::standard, AttentionKind::none, 0};
    total += detail::block_param_count(mid, time, spec.time_hidden);
    total += 9 * L.front().width * spec.out_channels + spec.out_channels;  // head
    if (time) {
        total += spec.time_embed_dim * spec.time_hidden + spec.time_hidden;
        total += spec.time_hidden * spec.time_hidden + spec.time_hidden;
    }
    return total;
}

/// Full-layer MAC count (weight multiplies) for one forward pass at the given
/// latent resolution. Attention terms here include projections and the
/// softmax-weighted apply, not just the score product.
inline std::int64_t unet_macs(const ToyUNetSpec& spec, Index latent_h, Index latent_w) {
    spec.validate();
    const auto& L = spec.levels;
    std::int64_t total = 0;
    auto block_macs = [&](const LevelSpec& l, std::int64_t h, std::int64_t w) {
        std::int64_t c = l.width, n = h * w, m = 0;
        switch (l.op) {
            case Operator::standard: m += 2 * conv_macs(c, c, 3, 3, h, w); break;
            case Operator::dsc: m += count_macs(OpKind::dsc, 0, 0, 0, c, h, w); break;
            case Operator::fsc: m += count_macs(OpKind::fsc, 0, 0, 0, c, h, w); break;
        }
        switch (l.attention) {
            case AttentionKind::none: break;
            case AttentionKind::self_attention: m += 4 * n * c * c + 2 * n * n * c; break;
            case AttentionKind::qgam: {
                std::int64_t q = l.qgam_queries;
                m += 3 * (n + q) * c * c + 4 * n * q * c;
                break;
            }
        }
        return m;
    };

    std::int64_t h = latent_h, w = latent_w;
    total += conv_macs(spec.in_channels, L.front().width, 3, 3, h, w);  // stem
    std::vector<std::pair<std::int64_t, std::int64_t>> res;
    for (size_t i = 0; i < L.size(); ++i) {
        res.push_back({h, w});
        total += L[i].blocks * block_macs(L[i], h, w);
        if (i + 1 < L.size()) {
            h /= 2;
            w /= 2;
            total += conv_macs(L[i].width, L[i + 1].width, 3, 3, h, w);  // down (stride 2)
        }
    }
    LevelSpec mid{L.back().width, 1, Operator::standard, AttentionKind::none, 0};
    total += block_macs(mid, h, w);
    for (size_t i = L.size() - 1; i-- > 0;) {
        auto [uh, uw] = res[i];
        total += conv_macs(L[i + 1].width, L[i].width, 3, 3, uh, uw);  // up conv after x2
        total += L[i].blocks * block_macs(L[i], uh, uw);               // decoder blocks
        h = uh;
        w = uw;
    }
    total += conv_macs(L.front().width, spec.out_channels, 3, 3, latent_h, latent_w);  // head
    return total;
}

namespace detail {

// (C,H,W) slice of batch item b as a (H*W, C) token matrix
template <typename Scalar>
Tensor<Scalar> chw_to_tokens(const Tensor<Scalar>& x, Index b) {
    const Index C = x.extent(1), H = x.extent(2), W = x.extent(3), n = H * W;
    Tensor<Scalar> t({n, C});
    for (Index c = 0; c < C; ++c) {
        const Scalar* src = x.data() + (b * C + c) * n;
        for (Index i = 0; i < n; ++i) t[i * C + c] = src[i];
    }
    return t;
}

template <typename Scalar>
void add_tokens_to_chw(Tensor<Scalar>& dst, Index b, const Tensor<Scalar>& tokens) {
    const Index C = dst.extent(1), n = dst.extent(2) * dst.extent(3);
    for (Index c = 0; c < C; ++c) {
        Scalar* out = dst.data() + (b * C + c) * n;
        for (Index i = 0; i < n; ++i) out[i] += tokens[i * C + c];
    }
}

// broadcast a (B,C) row onto a (B,C,H,W) tensor
template <typename Scalar>
void add_channel_bias(Tensor<Scalar>& x, const Tensor<Scalar>& bias_bc) {
    const Index B = x.extent(0), C = x.extent(1), hw = x.extent(2) * x.extent(3);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            Scalar v = bias_bc[b * C + c];
            Scalar* p = x.data() + (b * C + c) * hw;
            for (Index i = 0; i < hw; ++i) p[i] += v;
        }
}

template <typename Scalar>
Tensor<Scalar> sum_spatial(const Tensor<Scalar>& dy) {
    const Index B = dy.extent(0), C = dy.extent(1), hw = dy.extent(2) * dy.extent(3);
    Tensor<Scalar> out({B, C});
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            const Scalar* p = dy.data() + (b * C + c) * hw;
            Scalar acc = 0;
            for (Index i = 0; i < hw; ++i) acc += p[i];
            out[b * C + c] = acc;
        }
    return out;
}

}  // namespace detail

/// One residual unit: a spatial core (standard conv pair, DSC, or FSC) with
/// optional per-sample time bias, then an optional attention residual.
template <typename Scalar>
class OpBlock {
public:
    struct Cache {
        Tensor<Scalar> x;
        Tensor<Scalar> a1, h1;  // standard core intermediates
        Tensor<Scalar> xb;      // biased input for dsc/fsc cores
        typename DSCLayer<Scalar>::Cache dsc;
        typename FSCLayer<Scalar>::Cache fsc;
        Tensor<Scalar> res_out;
        std::vector<typename SelfAttention<Scalar>::Cache> sa;
        std::vector<typename QGAMLayer<Scalar>::Cache> qg;
    };

    OpBlock() = default;

    OpBlock(const LevelSpec& level, bool time, Index time_hidden, Index expected_tokens,
            CounterRng& rng)
        : op_(level.op), attn_(level.attention), width_(level.width), has_time_(time) {
        if (op_ == Operator::standard) {
            conv1_ = ConvLayer<Scalar>(width_, width_, 3, 3);
            conv2_ = ConvLayer<Scalar>(width_, width_, 3, 3);
            conv1_.init(rng);
            conv2_.init(rng);
        } else if (op_ == Operator::dsc) {
            dsc_ = DSCLayer<Scalar>(width_, rng);
        } else {
            fsc_ = FSCLayer<Scalar>(width_, rng);
        }
        if (has_time_) {
            time_proj_ = Linear<Scalar>(width_, time_hidden);
            time_proj_.init(rng);
        }
        if (attn_ == AttentionKind::self_attention) {
            self_attn_ = SelfAttention<Scalar>(width_, rng);
        } else if (attn_ == AttentionKind::qgam) {
            qgam_ = QGAMLayer<Scalar>(level.qgam_queries, width_, expected_tokens, rng);
        }
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>* time_h,
                           Cache* c = nullptr) const {
        if ((time_h != nullptr) != has_time_)
            throw std::invalid_argument("OpBlock: time conditioning mismatch");
        Tensor<Scalar> res_out = x;
        if (op_ == Operator::standard) {
            Tensor<Scalar> a1 = conv1_.forward(x);
            if (has_time_) detail::add_channel_bias(a1, time_proj_.forward(*time_h));
            Tensor<Scalar> h1 = activate(a1, Activation::silu);
            res_out += conv2_.forward(h1);
            if (c) {
                c->x = x;
                c->a1 = a1;
                c->h1 = h1;
            }
        } else {
            Tensor<Scalar> xb = x;
            if (has_time_) detail::add_channel_bias(xb, time_proj_.forward(*time_h));
            if (op_ == Operator::dsc)
                res_out += dsc_.forward(xb, c ? &c->dsc : nullptr);
            else
                res_out += fsc_.forward(xb, c ? &c->fsc : nullptr);
            if (c) {
                c->x = x;
                c->xb = xb;
            }
        }

        Tensor<Scalar> out = res_out;
        if (attn_ != AttentionKind::none) {
            const Index B = x.extent(0);
            if (c) {
                c->sa.assign(attn_ == AttentionKind::self_attention ? size_t(B) : 0, {});
                c->qg.assign(attn_ == AttentionKind::qgam ? size_t(B) : 0, {});
            }
            for (Index b = 0; b < B; ++b) {
                Tensor<Scalar> tokens = detail::chw_to_tokens(res_out, b);
                Tensor<Scalar> mixed =
                    attn_ == AttentionKind::self_attention
                        ? self_attn_.forward(tokens, c ? &c->sa[size_t(b)] : nullptr)
                        : qgam_.forward(tokens, c ? &c->qg[size_t(b)] : nullptr);
                detail::add_tokens_to_chw(out, b, mixed);
            }
        }
        if (c) c->res_out = res_out;
        return out;
    }

    // Returns dx; accumulates d(time_h) into d_time when conditioning is on.
    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& dy, const Tensor<Scalar>* time_h,
                            Tensor<Scalar>* d_time) {
        if (has_time_ && (!time_h || !d_time))
            throw std::logic_error("OpBlock: time-conditioned backward needs time_h and d_time");
        Tensor<Scalar> d_res = dy;
        if (attn_ != AttentionKind::none) {
            const Index B = dy.extent(0);
            for (Index b = 0; b < B; ++b) {
                Tensor<Scalar> dtok = detail::chw_to_tokens(dy, b);
                Tensor<Scalar> dtok_in = attn_ == AttentionKind::self_attention
                                             ? self_attn_.backward(c.sa[size_t(b)], dtok)
                                             : qgam_.backward(c.qg[size_t(b)], dtok);
                detail::add_tokens_to_chw(d_res, b, dtok_in);
            }
        }

        Tensor<Scalar> dx = d_res;  // residual skip
        if (op_ == Operator::standard) {
            Tensor<Scalar> dh1 = conv2_.backward(c.h1, d_res);
            Tensor<Scalar> da1 = activate_backward(c.a1, dh1, Activation::silu);
            if (has_time_) *d_time += time_proj_.backward(*time_h, detail::sum_spatial(da1));
            dx += conv1_.backward(c.x, da1);
        } else {
            Tensor<Scalar> dxb = op_ == Operator::dsc ? dsc_.backward(c.dsc, d_res)
                                                      : fsc_.backward(c.fsc, d_res);
            if (has_time_) *d_time += time_proj_.backward(*time_h, detail::sum_spatial(dxb));
            dx += dxb;
        }
        return dx;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        if (op_ == Operator::standard) {
            conv1_.collect(out, prefix + ".conv1");
            conv2_.collect(out, prefix + ".conv2");
        } else if (op_ == Operator::dsc) {
            dsc_.collect(out, prefix + ".dsc");
        } else {
            fsc_.collect(out, prefix + ".fsc");
        }
        if (has_time_) time_proj_.collect(out, prefix + ".time_proj");
        if (attn_ == AttentionKind::self_attention) self_attn_.collect(out, prefix + ".attn");
        if (attn_ == AttentionKind::qgam) qgam_.collect(out, prefix + ".qgam");
    }

private:
    Operator op_ = Operator::standard;
    AttentionKind attn_ = AttentionKind::none;
    Index width_ = 0;
    bool has_time_ = false;
    ConvLayer<Scalar> conv1_, conv2_;
    DSCLayer<Scalar> dsc_;
    FSCLayer<Scalar> fsc_;
    Linear<Scalar> time_proj_;
    SelfAttention<Scalar> self_attn_;
    QGAMLayer<Scalar> qgam_;
};

/// Per-forward feature taps at the skip resolutions, the surfaces the
/// distillation hooks align.
template <typename Scalar>
struct UNetFeatures {
    std::vector<Tensor<Scalar>> enc;  // per level, after encoder blocks
    Tensor<Scalar> mid;
    std::vector<Tensor<Scalar>> dec;  // per level < deepest, after decoder blocks
};

/// Gradients injected at the tap points during distillation; empty tensors
/// mean no contribution at that tap.
template <typename Scalar>
struct UNetFeatureGrads {
    std::vector<Tensor<Scalar>> enc;
    std::vector<Tensor<Scalar>> dec;
};

template <typename Scalar>
class ToyUNet {
public:
    struct Cache {
        Tensor<Scalar> z;
        std::vector<double> tsteps;
        Tensor<Scalar> time_sin, time_a1, time_s1, time_h;
        Tensor<Scalar> stem_out;
        std::vector<std::vector<typename OpBlock<Scalar>::Cache>> enc_blocks;
        std::vector<Tensor<Scalar>> enc_out;
        std::vector<Tensor<Scalar>> down_out;
        typename OpBlock<Scalar>::Cache mid;
        Tensor<Scalar> mid_out;
        std::vector<Tensor<Scalar>> up_in;       // input of nearest-upsample per level
        std::vector<Tensor<Scalar>> up_sampled;  // after x2, before up conv
        std::vector<std::vector<typename OpBlock<Scalar>::Cache>> dec_blocks;
        std::vector<Tensor<Scalar>> dec_in;
        std::vector<Tensor<Scalar>> dec_out;
    };

    ToyUNet() = default;

    ToyUNet(ToyUNetSpec spec, Index latent_h, Index latent_w, CounterRng& rng)
        : spec_(std::move(spec)) {
        spec_.validate();
        const auto& L = spec_.levels;
        const bool time = spec_.time_conditioning;

        stem_ = ConvLayer<Scalar>(L.front().width, spec_.in_channels, 3, 3);
        stem_.init(rng);

        Index h = latent_h, w = latent_w;
        for (size_t i = 0; i < L.size(); ++i) {
            std::vector<OpBlock<Scalar>> blocks;
            for (int b = 0; b < L[i].blocks; ++b)
                blocks.emplace_back(L[i], time, spec_.time_hidden, h * w, rng);
            enc_.push_back(std::move(blocks));
            if (i + 1 < L.size()) {
                ConvLayer<Scalar> down(L[i + 1].width, L[i].width, 3, 3, true, 1, 2, 1, 1);
                down.init(rng);
                down_.push_back(std::move(down));
                h /= 2;
                w /= 2;
            }
        }
        LevelSpec mid_level{L.back().width, 1, Operator::standard, AttentionKind::none, 0};
        mid_ = OpBlock<Scalar>(mid_level, time, spec_.time_hidden, h * w, rng);

        for (size_t i = 0; i + 1 < L.size(); ++i) {
            ConvLayer<Scalar> up(L[i].width, L[i + 1].width, 3, 3);
            up.init(rng);
            up_.push_back(std::move(up));
            std::vector<OpBlock<Scalar>> blocks;
            for (int b = 0; b < L[i].blocks; ++b) {
                Index lh = latent_h, lw = latent_w;
                for (size_t k = 0; k < i; ++k) {
                    lh /= 2;
                    lw /= 2;
                }
                blocks.emplace_back(L[i], time, spec_.time_hidden, lh * lw, rng);
            }
            dec_.push_back(std::move(blocks));
        }

        head_ = ConvLayer<Scalar>(spec_.out_channels, L.front().width, 3, 3);
        head_.init(rng);

        if (time) {
            time_mlp1_ = Linear<Scalar>(spec_.time_hidden, spec_.time_embed_dim);
            time_mlp2_ = Linear<Scalar>(spec_.time_hidden, spec_.time_hidden);
            time_mlp1_.init(rng);
            time_mlp2_.init(rng);
        }
    }

    const ToyUNetSpec& spec() const { return spec_; }
    size_t num_levels() const { return spec_.levels.size(); }

    // The boundary convs the VAE fusion replaces in the student build.
    ConvLayer<Scalar>& stem() { return stem_; }
    ConvLayer<Scalar>& head() { return head_; }
    const ConvLayer<Scalar>& stem() const { return stem_; }
    const ConvLayer<Scalar>& head() const { return head_; }

    // Student-style entry point; rejects time conditioning by contract.
    Tensor<Scalar> forward(const Tensor<Scalar>& z, Cache* cache = nullptr,
                           UNetFeatures<Scalar>* taps = nullptr) const {
        if (spec_.time_conditioning)
            throw std::invalid_argument("ToyUNet: time-conditioned net needs timesteps");
        return run(z, nullptr, cache, taps);
    }

    // Teacher-style entry point with one continuous timestep per batch item.
    Tensor<Scalar> forward(const Tensor<Scalar>& z, const std::vector<double>& tsteps,
                           Cache* cache = nullptr, UNetFeatures<Scalar>* taps = nullptr) const {
        if (!spec_.time_conditioning)
            throw std::invalid_argument("ToyUNet: spec has no time conditioning");
        if (static_cast<Index>(tsteps.size()) != z.extent(0))
            throw std::invalid_argument("ToyUNet: one timestep per batch item required");
        return run(z, &tsteps, cache, taps);
    }

    // Backward through the whole net. Feature gradients (if any) are added at
    // the corresponding tap points. For time-conditioned nets, d_tsteps
    // receives dL/dt per batch item.
    Tensor<Scalar> backward(const Cache& c, const Tensor<Scalar>& dy,
                            std::vector<double>* d_tsteps = nullptr,
                            const UNetFeatureGrads<Scalar>* fg = nullptr) {
        const size_t L = spec_.levels.size();
        const bool time = spec_.time_conditioning;
        Tensor<Scalar> d_time;
        const Tensor<Scalar>* th = time ? &c.time_h : nullptr;
        if (time) d_time = Tensor<Scalar>({c.time_h.extent(0), spec_.time_hidden});
        auto dt = [&]() { return time ? &d_time : nullptr; };

        // head input is dec_out[0], or mid_out for a single-level net
        Tensor<Scalar> d = head_.backward(L > 1 ? c.dec_out.front() : c.mid_out, dy);

        // decoder sweep in reverse forward order: level 0 was computed last
        std::vector<Tensor<Scalar>> skip_grads(L > 0 ? L - 1 : 0);
        for (size_t i = 0; i + 1 < L; ++i) {
            if (fg && i < fg->dec.size() && fg->dec[i].size() > 0) d += fg->dec[i];
            for (size_t b = c.dec_blocks[i].size(); b-- > 0;)
                d = dec_[i][b].backward(c.dec_blocks[i][b], d, th, dt());
            // d is the gradient of dec_in[i] = upconv(up2(h_deeper)) + enc_out[i]
            skip_grads[i] = d;
            Tensor<Scalar> d_up2 = up_[i].backward(c.up_sampled[i], d);
            d = nearest_upsample2_backward(d_up2);  // gradient of dec_out[i+1] or mid_out
        }

        Tensor<Scalar> d_cur = mid_.backward(c.mid, d, th, dt());

        // encoder sweep, deepest level first; d_cur enters as d(enc_out[i])
        for (size_t i = L; i-- > 0;) {
            if (i + 1 < L) d_cur += skip_grads[i];
            if (fg && i < fg->enc.size() && fg->enc[i].size() > 0) d_cur += fg->enc[i];
            for (size_t b = c.enc_blocks[i].size(); b-- > 0;)
                d_cur = enc_[i][b].backward(c.enc_blocks[i][b], d_cur, th, dt());
            if (i > 0) d_cur = down_[i - 1].backward(c.enc_out[i - 1], d_cur);
        }
        Tensor<Scalar> dz = stem_.backward(c.z, d_cur);

        if (time) {
            Tensor<Scalar> d_s1 = time_mlp2_.backward(c.time_s1, d_time);
            Tensor<Scalar> d_a1 = activate_backward(c.time_a1, d_s1, Activation::silu);
            Tensor<Scalar> d_sin = time_mlp1_.backward(c.time_sin, d_a1);
            if (d_tsteps) {
                d_tsteps->assign(c.tsteps.size(), 0.0);
                const Index E = spec_.time_embed_dim, half = E / 2;
                for (size_t b = 0; b < c.tsteps.size(); ++b) {
                    double acc = 0;
                    for (Index k = 0; k < half; ++k) {
                        double wk = sin_freq(k);
                        double t = c.tsteps[b];
                        acc += d_sin[Index(b) * E + 2 * k] * std::cos(t * wk) * wk;
                        acc -= d_sin[Index(b) * E + 2 * k + 1] * std::sin(t * wk) * wk;
                    }
                    (*d_tsteps)[b] = acc;
                }
            }
        }
        return dz;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        stem_.collect(out, prefix + ".stem");
        for (size_t i = 0; i < enc_.size(); ++i)
            for (size_t b = 0; b < enc_[i].size(); ++b)
                enc_[i][b].collect(out, prefix + ".enc" + std::to_string(i) + ".b" +
                                            std::to_string(b));
        for (size_t i = 0; i < down_.size(); ++i)
            down_[i].collect(out, prefix + ".down" + std::to_string(i));
        mid_.collect(out, prefix + ".mid");
        for (size_t i = 0; i < up_.size(); ++i) {
            up_[i].collect(out, prefix + ".up" + std::to_string(i));
            for (size_t b = 0; b < dec_[i].size(); ++b)
                dec_[i][b].collect(out, prefix + ".dec" + std::to_string(i) + ".b" +
                                            std::to_string(b));
        }
        head_.collect(out, prefix + ".head");
        if (spec_.time_conditioning) {
            time_mlp1_.collect(out, prefix + ".time_mlp1");
            time_mlp2_.collect(out, prefix + ".time_mlp2");
        }
    }

    Index param_count() {
        ParamList<Scalar> params;
        collect(params, "net");
        return total_param_count(params);
    }

private:
    double sin_freq(Index k) const {
        const Index half = spec_.time_embed_dim / 2;
        if (half <= 1) return 1.0;
        return std::exp(-std::log(10000.0) * double(k) / double(half - 1));
    }

    Tensor<Scalar> time_features(const std::vector<double>& tsteps) const {
        const Index B = static_cast<Index>(tsteps.size()), E = spec_.time_embed_dim;
        const Index half = E / 2;
        Tensor<Scalar> f({B, E});
        for (Index b = 0; b < B; ++b)
            for (Index k = 0; k < half; ++k) {
                double wk = sin_freq(k);
                f[b * E + 2 * k] = static_cast<Scalar>(std::sin(tsteps[size_t(b)] * wk));
                f[b * E + 2 * k + 1] = static_cast<Scalar>(std::cos(tsteps[size_t(b)] * wk));
            }
        return f;
    }

    Tensor<Scalar> run(const Tensor<Scalar>& z, const std::vector<double>* tsteps, Cache* c,
                       UNetFeatures<Scalar>* taps) const {
        if (z.rank() != 4 || z.extent(1) != spec_.in_channels)
            throw std::invalid_argument("ToyUNet: bad input shape");
        const size_t L = spec_.levels.size();
        const bool time = tsteps != nullptr;

        Tensor<Scalar> time_h;
        Tensor<Scalar> time_sin, time_a1, time_s1;
        if (time) {
            time_sin = time_features(*tsteps);
            time_a1 = time_mlp1_.forward(time_sin);
            time_s1 = activate(time_a1, Activation::silu);
            time_h = time_mlp2_.forward(time_s1);
        }
        const Tensor<Scalar>* th = time ? &time_h : nullptr;

        if (c) {
            *c = Cache{};
            c->z = z;
            if (time) {
                c->tsteps = *tsteps;
                c->time_sin = time_sin;
                c->time_a1 = time_a1;
                c->time_s1 = time_s1;
                c->time_h = time_h;
            }
            c->enc_blocks.resize(L);
            c->dec_blocks.resize(L > 0 ? L - 1 : 0);
        }

        Tensor<Scalar> h = stem_.forward(z);
        if (c) c->stem_out = h;

        std::vector<Tensor<Scalar>> enc_out;
        for (size_t i = 0; i < L; ++i) {
            if (c) c->enc_blocks[i].resize(enc_[i].size());
            for (size_t b = 0; b < enc_[i].size(); ++b)
                h = enc_[i][b].forward(h, th, c ? &c->enc_blocks[i][b] : nullptr);
            enc_out.push_back(h);
            if (c) c->enc_out.push_back(h);
            if (taps) taps->enc.push_back(h);
            if (i + 1 < L) {
                h = down_[i].forward(h);
                if (c) c->down_out.push_back(h);
            }
        }

        h = mid_.forward(h, th, c ? &c->mid : nullptr);
        if (c) c->mid_out = h;
        if (taps) taps->mid = h;

        if (taps) taps->dec.resize(L > 0 ? L - 1 : 0);
        if (c && L > 1) {
            c->up_in.resize(L - 1);
            c->up_sampled.resize(L - 1);
            c->dec_in.resize(L - 1);
            c->dec_out.resize(L - 1);
        }
        for (size_t i = L - 1; i-- > 0;) {
            Tensor<Scalar> up2 = nearest_upsample2(h);
            if (c) {
                c->up_in[i] = h;
                c->up_sampled[i] = up2;
            }
            h = up_[i].forward(up2);
            h += enc_out[i];
            if (c) {
                c->dec_in[i] = h;
                c->dec_blocks[i].resize(dec_[i].size());
            }
            for (size_t b = 0; b < dec_[i].size(); ++b)
                h = dec_[i][b].forward(h, th, c ? &c->dec_blocks[i][b] : nullptr);
            if (c) c->dec_out[i] = h;
            if (taps) taps->dec[i] = h;
        }

        Tensor<Scalar> out = head_.forward(h);
        assert_finite(out, "ToyUNet output");
        return out;
    }

    ToyUNetSpec spec_;
    ConvLayer<Scalar> stem_, head_;
    std::vector<std::vector<OpBlock<Scalar>>> enc_;
    std::vector<ConvLayer<Scalar>> down_;
    OpBlock<Scalar> mid_;
    std::vector<ConvLayer<Scalar>> up_;
    std::vector<std::vector<OpBlock<Scalar>>> dec_;
    Linear<Scalar> time_mlp1_, time_mlp2_;
};

template <typename Scalar>
ToyUNet<Scalar> build_unet(const ToyUNetSpec& spec, Index latent_h, Index latent_w,
                           CounterRng& rng) {
    return ToyUNet<Scalar>(spec, latent_h, latent_w, rng);
}

}  // namespace slimdiff
