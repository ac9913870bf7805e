#pragma once

#include "slimdiff/conv.hpp"
#include "slimdiff/ops.hpp"
#include "slimdiff/params.hpp"
#include "slimdiff/tensor.hpp"

#include <string>

namespace slimdiff {

/// Conv kernel plus gradient accumulators. forward() is pure; backward()
/// takes the forward input back (the only state a conv needs) and mutates
/// only the gradient buffers, which the single training thread owns.
template <typename Scalar>
struct ConvLayer {
    ConvKernel<Scalar> kernel;
    ConvKernel<Scalar> grads;

    ConvLayer() = default;
    ConvLayer(Index c_out, Index c_in, Index kh, Index kw, bool with_bias = true, Index groups = 1,
              Index stride = 1, Index ph = -1, Index pw = -1)
        : kernel(c_out, c_in, kh, kw, with_bias, groups, stride, ph, pw) {
        grads = kernel.grads_like();
    }

    void init(CounterRng& rng) { init_conv(kernel, rng); }

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const { return conv2d(x, kernel); }

    Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
        return conv2d_backward(x, kernel, dy, grads);
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        collect_conv(out, prefix, kernel, grads);
    }

    Index param_count() const { return kernel.param_count(); }
};

/// y = x W^T + b over row vectors; x is (rows, in), W is (out, in).
template <typename Scalar>
struct Linear {
    Tensor<Scalar> weight;  // (out, in)
    Tensor<Scalar> bias;    // (out)
    Tensor<Scalar> dweight;
    Tensor<Scalar> dbias;

    Linear() = default;
    Linear(Index out, Index in)
        : weight({out, in}), bias({out}), dweight({out, in}), dbias({out}) {}

    void init(CounterRng& rng) {
        init_matrix(weight, weight.extent(1), rng);
        bias.array().setZero();
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
        Index rows = x.extent(0), in = x.extent(1), out = weight.extent(0);
        Tensor<Scalar> y({rows, out});
        as_matrix(y, rows, out).noalias() =
            as_matrix(x, rows, in) * as_matrix(weight, out, in).transpose();
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < out; ++c) y[r * out + c] += bias[c];
        return y;
    }

    Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
        Index rows = x.extent(0), in = weight.extent(1), out = weight.extent(0);
        as_matrix(dweight, out, in).noalias() +=
            as_matrix(dy, rows, out).transpose() * as_matrix(x, rows, in);
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < out; ++c) dbias[c] += dy[r * out + c];
        Tensor<Scalar> dx(x.shape());
        as_matrix(dx, rows, in).noalias() = as_matrix(dy, rows, out) * as_matrix(weight, out, in);
        return dx;
    }

    void collect(ParamList<Scalar>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", &weight, &dweight});
        out.push_back({prefix + ".bias", &bias, &dbias});
    }

    Index param_count() const { return weight.size() + bias.size(); }
};

}  // namespace slimdiff
