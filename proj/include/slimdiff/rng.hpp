#pragma once

#include "slimdiff/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace slimdiff {

/// Counter-based deterministic generator. Each draw is a pure function of
/// (seed, stream, counter), so runs replay bit-exactly regardless of call
/// interleaving across streams.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)))) {}

    CounterRng fork(std::uint64_t stream) const {
        CounterRng r(0);
        r.key_ = mix(key_ ^ (0xD1B54A32D192ED03ull * (stream + 1)));
        return r;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * (++counter_)); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Box-Muller; consumes two counters per pair, caches the second draw.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();  // open at zero for the log
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    template <typename Scalar>
    Tensor<Scalar> gaussian_tensor(Shape shape, double stddev = 1.0) {
        Tensor<Scalar> t(std::move(shape));
        for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stddev * gaussian());
        return t;
    }

    template <typename Scalar>
    Tensor<Scalar> uniform_tensor(Shape shape, double lo, double hi) {
        Tensor<Scalar> t(std::move(shape));
        for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(uniform(lo, hi));
        return t;
    }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace slimdiff
