#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "q2l/numcore/tensor.hpp"

// Tensor binary layout (all integers and scalars little-endian):
//   "Q2LT" | version u32 | rank u32 | extents u32[rank] | scalars
// version 1 carries IEEE-754 binary32 scalars, version 2 binary64.

namespace q2l {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

inline constexpr std::array<char, 4> kTensorMagic{'Q', '2', 'L', 'T'};

template <class T>
constexpr std::uint32_t tensor_version() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 1u : 2u;
}

template <class U>
void put_le(std::ostream& os, U value) {
    static_assert(std::is_unsigned_v<U>);
    std::array<char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
    os.write(buf.data(), buf.size());
}

template <class U>
U get_le(std::istream& is, const char* what) {
    static_assert(std::is_unsigned_v<U>);
    std::array<unsigned char, sizeof(U)> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size()))
        throw FormatError(std::string("truncated input while reading ") + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

template <class T>
using ScalarBits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <class T>
std::uint64_t encoded_size(const Tensor<T>& t) {
    return 4 + 4 + 4 + 4 * t.rank() + sizeof(T) * t.numel();
}

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write(kTensorMagic.data(), kTensorMagic.size());
    put_le<std::uint32_t>(os, tensor_version<T>());
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) {
        if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("extent exceeds u32");
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    }
    for (T v : t.data()) put_le<ScalarBits<T>>(os, std::bit_cast<ScalarBits<T>>(v));
    if (!os) throw FormatError("write failed");
}

template <class T>
Tensor<T> read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size())) throw FormatError("truncated tensor header");
    if (magic != kTensorMagic) throw FormatError("bad tensor magic");
    const auto version = get_le<std::uint32_t>(is, "version");
    if (version != tensor_version<T>())
        throw FormatError("tensor scalar version " + std::to_string(version) + " does not match requested type");
    const auto rank = get_le<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw FormatError("unsupported tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        e = get_le<std::uint32_t>(is, "extent");
        if (e == 0) throw FormatError("zero extent");
    }
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<T>(get_le<ScalarBits<T>>(is, "scalar data"));
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace io
}  // namespace q2l
