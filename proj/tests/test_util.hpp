#pragma once

#include "slimdiff/gradcheck.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/rng.hpp"
#include "slimdiff/tensor.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace slimdiff::test {

// Central-difference check of accumulated parameter gradients against a loss
// closure. Call after a forward+backward pass has filled the grad buffers.
// Large tensors are probed at up to `max_probes` seeded random positions.
inline double check_param_grads(ParamList<double>& params,
                                const std::function<double()>& loss_fn, CounterRng& rng,
                                double h = 1e-5, Index max_probes = 32) {
    double worst = 0.0;
    for (auto& p : params) {
        Tensor<double>& v = *p.value;
        Tensor<double>& g = *p.grad;
        double scale = std::max(g.array().abs().maxCoeff(), 1e-6);

        std::vector<Index> idx;
        if (v.size() <= max_probes) {
            for (Index i = 0; i < v.size(); ++i) idx.push_back(i);
        } else {
            for (Index k = 0; k < max_probes; ++k)
                idx.push_back(static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(v.size()))));
        }
        for (Index i : idx) {
            double orig = v[i];
            v[i] = orig + h;
            double lp = loss_fn();
            v[i] = orig - h;
            double lm = loss_fn();
            v[i] = orig;
            double numeric = (lp - lm) / (2 * h);
            double denom = std::max({scale, std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(g[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace slimdiff::test
