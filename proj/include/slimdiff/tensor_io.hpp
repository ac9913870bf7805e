#pragma once

#include "slimdiff/tensor.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace slimdiff {

// Flat binary tensor container:
//   8 bytes  magic "SLIMTSR1"
//   u8       dtype code (1 = float32, 2 = float64)
//   u8       rank
//   u16      reserved (zero)
//   u64 * r  extents, little-endian
//   payload  values, little-endian, row-major
// A JSON sidecar (<path>.json) mirrors the header for external tooling.

inline constexpr char kTensorMagic[8] = {'S', 'L', 'I', 'M', 'T', 'S', 'R', '1'};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&value);
        std::reverse(p, p + sizeof(T));
    }
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw std::runtime_error("tensor file truncated");
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&value);
        std::reverse(p, p + sizeof(T));
    }
    return value;
}

template <typename Scalar>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<Scalar, float>) return 1;
    else return 2;
}

}  // namespace detail

template <typename Scalar>
void save_tensor_stream(std::ostream& os, const Tensor<Scalar>& t) {
    os.write(kTensorMagic, 8);
    detail::write_le<std::uint8_t>(os, detail::dtype_code<Scalar>());
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    detail::write_le<std::uint16_t>(os, 0);
    for (Index e : t.shape()) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.size(); ++i) detail::write_le<Scalar>(os, t[i]);
}

template <typename Scalar>
Tensor<Scalar> load_tensor_stream(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kTensorMagic, 8) != 0)
        throw std::runtime_error("not a tensor container (bad magic)");
    auto dtype = detail::read_le<std::uint8_t>(is);
    auto rank = detail::read_le<std::uint8_t>(is);
    detail::read_le<std::uint16_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(detail::read_le<std::uint64_t>(is));

    Tensor<Scalar> t(shape);
    if (dtype == detail::dtype_code<Scalar>()) {
        for (Index i = 0; i < t.size(); ++i) t[i] = detail::read_le<Scalar>(is);
    } else if (dtype == 1) {
        for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(detail::read_le<float>(is));
    } else if (dtype == 2) {
        for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(detail::read_le<double>(is));
    } else {
        throw std::runtime_error("unknown dtype code " + std::to_string(int(dtype)));
    }
    return t;
}

template <typename Scalar>
void save_tensor(const std::string& path, const Tensor<Scalar>& t, const std::string& name = "") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save_tensor_stream(os, t);

    nlohmann::json side;
    side["magic"] = std::string(kTensorMagic, 8);
    side["dtype"] = std::is_same_v<Scalar, float> ? "float32" : "float64";
    side["byte_order"] = "little";
    side["shape"] = t.shape();
    if (!name.empty()) side["name"] = name;
    std::ofstream js(path + ".json");
    js << side.dump(2) << "\n";
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load_tensor_stream<Scalar>(is);
}

}  // namespace slimdiff
