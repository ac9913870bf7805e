#pragma once

#include "slimdiff/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace slimdiff {

/// Numerically stable softmax along one axis (max-subtraction before exp).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input, Index axis) {
    if (axis < 0 || axis >= input.rank()) throw std::invalid_argument("softmax: axis out of range");
    assert_finite(input, "softmax input");

    const Shape& s = input.shape();
    Index n = s[static_cast<size_t>(axis)];
    Index inner = 1;
    for (Index a = axis + 1; a < input.rank(); ++a) inner *= s[static_cast<size_t>(a)];
    Index outer = input.size() / (n * inner);

    Tensor<Scalar> out(input.shape());
    for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
            Index base = o * n * inner + in;
            Scalar m = input[base];
            for (Index k = 1; k < n; ++k) m = std::max(m, input[base + k * inner]);
            Scalar z = 0;
            for (Index k = 0; k < n; ++k) {
                Scalar e = std::exp(input[base + k * inner] - m);
                out[base + k * inner] = e;
                z += e;
            }
            for (Index k = 0; k < n; ++k) out[base + k * inner] /= z;
        }
    }
    return out;
}

/// dL/dx given y = softmax(x, axis) and dL/dy.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy, Index axis) {
    if (!y.same_shape(dy)) throw std::invalid_argument("softmax_backward: shape mismatch");
    const Shape& s = y.shape();
    Index n = s[static_cast<size_t>(axis)];
    Index inner = 1;
    for (Index a = axis + 1; a < y.rank(); ++a) inner *= s[static_cast<size_t>(a)];
    Index outer = y.size() / (n * inner);

    Tensor<Scalar> dx(y.shape());
    for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
            Index base = o * n * inner + in;
            Scalar dot = 0;
            for (Index k = 0; k < n; ++k) dot += dy[base + k * inner] * y[base + k * inner];
            for (Index k = 0; k < n; ++k) {
                Index i = base + k * inner;
                dx[i] = y[i] * (dy[i] - dot);
            }
        }
    }
    return dx;
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
    return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x))
                  : std::exp(x) / (Scalar(1) + std::exp(x));
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
    return map(x, [](Scalar v) { return sigmoid_scalar(v); });
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx = y;
    for (Index i = 0; i < dx.size(); ++i) dx[i] = dy[i] * y[i] * (Scalar(1) - y[i]);
    return dx;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels: need 4-d");
    if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2) || a.extent(3) != b.extent(3))
        throw std::invalid_argument("concat_channels: non-channel extents differ");
    const Index B = a.extent(0), Ca = a.extent(1), Cb = b.extent(1);
    const Index H = a.extent(2), W = a.extent(3), hw = H * W;
    Tensor<Scalar> out({B, Ca + Cb, H, W});
    for (Index n = 0; n < B; ++n) {
        std::copy(a.data() + n * Ca * hw, a.data() + (n + 1) * Ca * hw,
                  out.data() + n * (Ca + Cb) * hw);
        std::copy(b.data() + n * Cb * hw, b.data() + (n + 1) * Cb * hw,
                  out.data() + (n * (Ca + Cb) + Ca) * hw);
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, Index from, Index to) {
    if (t.rank() != 4) throw std::invalid_argument("slice_channels: need 4-d");
    if (from < 0 || to > t.extent(1) || from >= to)
        throw std::invalid_argument("slice_channels: bad channel range");
    const Index B = t.extent(0), C = t.extent(1), H = t.extent(2), W = t.extent(3), hw = H * W;
    Tensor<Scalar> out({B, to - from, H, W});
    for (Index n = 0; n < B; ++n)
        std::copy(t.data() + (n * C + from) * hw, t.data() + (n * C + to) * hw,
                  out.data() + n * (to - from) * hw);
    return out;
}

enum class Activation { silu, identity };

template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& x, Activation act) {
    if (act == Activation::identity) return x;
    return map(x, [](Scalar v) { return v * sigmoid_scalar(v); });
}

template <typename Scalar>
Tensor<Scalar> activate_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy, Activation act) {
    if (act == Activation::identity) return dy;
    Tensor<Scalar> dx = x;
    for (Index i = 0; i < dx.size(); ++i) {
        Scalar s = sigmoid_scalar(x[i]);
        dx[i] = dy[i] * (s + x[i] * s * (Scalar(1) - s));
    }
    return dx;
}

}  // namespace slimdiff
