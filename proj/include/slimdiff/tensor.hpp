#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdiff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& s) {
    Index n = 1;
    for (Index e : s) {
        if (e < 0) throw std::invalid_argument("tensor extent must be non-negative");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

/// Dense N-d array in row-major order over an Eigen flat store.
/// For 4-d data the axis convention is (batch, channels, height, width).
template <typename Scalar>
class Tensor {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_ = Array::Zero(shape_size(shape_));
    }

    Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
        data_ = Array::Constant(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
        if (static_cast<Index>(values.size()) != shape_size(shape_))
            throw std::invalid_argument("initializer size does not match shape " + shape_str(shape_));
        data_.resize(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values) data_[i++] = v;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }

    static Tensor from_vector(Shape shape, const std::vector<Scalar>& values) {
        Tensor t(std::move(shape));
        if (static_cast<Index>(values.size()) != t.size())
            throw std::invalid_argument("value count does not match shape");
        for (Index i = 0; i < t.size(); ++i) t.data_[i] = values[static_cast<size_t>(i)];
        return t;
    }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return data_.size(); }
    Index extent(Index axis) const { return shape_.at(static_cast<size_t>(axis)); }

    Array& array() { return data_; }
    const Array& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    // 4-d accessors (B,C,H,W).
    Scalar& at4(Index b, Index c, Index h, Index w) { return data_[index4(b, c, h, w)]; }
    Scalar at4(Index b, Index c, Index h, Index w) const { return data_[index4(b, c, h, w)]; }

    Index index4(Index b, Index c, Index h, Index w) const {
        return ((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != size())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                        " changes element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void require_shape(const Shape& s, const char* what) const {
        if (shape_ != s)
            throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(s) +
                                        ", got " + shape_str(shape_));
    }

    bool all_finite() const { return data_.isFinite().all(); }

    Scalar sum() const { return data_.sum(); }
    Scalar mean() const { return size() > 0 ? data_.mean() : Scalar(0); }
    Scalar min() const { return data_.minCoeff(); }
    Scalar max() const { return data_.maxCoeff(); }

    Scalar variance() const {
        if (size() < 2) return Scalar(0);
        Scalar m = mean();
        return (data_ - m).square().sum() / Scalar(size());
    }

    Tensor& operator+=(const Tensor& o) { binary_check(o); data_ += o.data_; return *this; }
    Tensor& operator-=(const Tensor& o) { binary_check(o); data_ -= o.data_; return *this; }
    Tensor& operator*=(Scalar v) { data_ *= v; return *this; }

    friend Tensor operator+(Tensor a, const Tensor& b) { a += b; return a; }
    friend Tensor operator-(Tensor a, const Tensor& b) { a -= b; return a; }
    friend Tensor operator*(Tensor a, Scalar v) { a *= v; return a; }
    friend Tensor operator*(Scalar v, Tensor a) { a *= v; return a; }

    friend Tensor hadamard(const Tensor& a, const Tensor& b) {
        a.binary_check(b);
        Tensor out = a;
        out.data_ *= b.data_;
        return out;
    }

private:
    void binary_check(const Tensor& o) const {
        if (shape_ != o.shape_)
            throw std::invalid_argument("shape mismatch: " + shape_str(shape_) + " vs " +
                                        shape_str(o.shape_));
    }

    Shape shape_;
    Array data_;
};

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

template <typename Scalar>
void assert_finite(const Tensor<Scalar>& t, const char* context) {
    if (!t.all_finite())
        throw std::runtime_error(std::string("non-finite values in ") + context);
}

template <typename Scalar, typename Fn>
Tensor<Scalar> map(const Tensor<Scalar>& t, Fn&& fn) {
    Tensor<Scalar> out = t;
    for (Index i = 0; i < out.size(); ++i) out[i] = fn(t[i]);
    return out;
}

// Row-major matrix views over flat tensor storage, the bridge into Eigen GEMM.
template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<MatrixR<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const MatrixR<Scalar>>;

template <typename Scalar>
MatMap<Scalar> as_matrix(Tensor<Scalar>& t, Index rows, Index cols) {
    if (rows * cols != t.size()) throw std::invalid_argument("matrix view size mismatch");
    return MatMap<Scalar>(t.data(), rows, cols);
}

template <typename Scalar>
ConstMatMap<Scalar> as_matrix(const Tensor<Scalar>& t, Index rows, Index cols) {
    if (rows * cols != t.size()) throw std::invalid_argument("matrix view size mismatch");
    return ConstMatMap<Scalar>(t.data(), rows, cols);
}

// 2-d tensors as matrices: a (r,k) x b (k,c) -> (r,c), plus the transposed forms.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    Index r = a.extent(0), k = a.extent(1), c = b.extent(1);
    if (b.extent(0) != k) throw std::invalid_argument("matmul: inner dims differ");
    Tensor<Scalar> out({r, c});
    as_matrix(out, r, c).noalias() = as_matrix(a, r, k) * as_matrix(b, k, c);
    return out;
}

template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    Index r = a.extent(0), k = a.extent(1), c = b.extent(0);
    if (b.extent(1) != k) throw std::invalid_argument("matmul_nt: inner dims differ");
    Tensor<Scalar> out({r, c});
    as_matrix(out, r, c).noalias() = as_matrix(a, r, k) * as_matrix(b, c, k).transpose();
    return out;
}

template <typename Scalar>
Tensor<Scalar> matmul_tn(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    Index r = a.extent(1), k = a.extent(0), c = b.extent(1);
    if (b.extent(0) != k) throw std::invalid_argument("matmul_tn: inner dims differ");
    Tensor<Scalar> out({r, c});
    as_matrix(out, r, c).noalias() = as_matrix(a, k, r).transpose() * as_matrix(b, k, c);
    return out;
}

}  // namespace slimdiff
