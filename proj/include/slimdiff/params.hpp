#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/tensor.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace slimdiff {

/// Named view onto one parameter tensor and its gradient accumulator.
/// Modules hand these out so the optimizer and checkpoint code never need
/// to know module internals.
template <typename Scalar>
struct ParamRef {
    std::string name;
    Tensor<Scalar>* value = nullptr;
    Tensor<Scalar>* grad = nullptr;
};

template <typename Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

template <typename Scalar>
Index total_param_count(const ParamList<Scalar>& params) {
    Index n = 0;
    for (const auto& p : params) n += p.value->size();
    return n;
}

template <typename Scalar>
void zero_grads(ParamList<Scalar>& params) {
    for (auto& p : params) p.grad->array().setZero();
}

/// Uniform init with Var = 1/fan_in; biases start at zero.
template <typename Scalar>
void init_conv(ConvKernel<Scalar>& k, CounterRng& rng) {
    Index fan_in = k.c_in_per_group() * k.kh() * k.kw();
    double bound = std::sqrt(3.0 / double(fan_in));
    for (Index i = 0; i < k.weights.size(); ++i)
        k.weights[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    if (k.has_bias) k.bias.array().setZero();
}

template <typename Scalar>
void init_matrix(Tensor<Scalar>& w, Index fan_in, CounterRng& rng) {
    double bound = std::sqrt(3.0 / double(fan_in));
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

template <typename Scalar>
void collect_conv(ParamList<Scalar>& out, const std::string& prefix, ConvKernel<Scalar>& k,
                  ConvKernel<Scalar>& g) {
    out.push_back({prefix + ".weight", &k.weights, &g.weights});
    if (k.has_bias) out.push_back({prefix + ".bias", &k.bias, &g.bias});
}

/// Plain gradient descent with momentum (velocity buffers keyed per parameter).
template <typename Scalar>
class SgdMomentum {
public:
    SgdMomentum(Scalar lr, Scalar momentum = Scalar(0.9)) : lr_(lr), momentum_(momentum) {}

    void step(ParamList<Scalar>& params) {
        if (velocity_.empty())
            for (const auto& p : params)
                velocity_.emplace_back(Tensor<Scalar>(p.value->shape()));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& v = velocity_[i];
            v.array() = momentum_ * v.array() + params[i].grad->array();
            params[i].value->array() -= lr_ * v.array();
        }
    }

    void set_lr(Scalar lr) { lr_ = lr; }
    Scalar lr() const { return lr_; }

private:
    Scalar lr_;
    Scalar momentum_;
    std::vector<Tensor<Scalar>> velocity_;
};

}  // namespace slimdiff
