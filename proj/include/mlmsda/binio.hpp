#ifndef MLMSDA_BINIO_HPP
#define MLMSDA_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlmsda::binio {

// All on-disk integers and floats are little-endian regardless of host.

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw std::runtime_error(std::string("truncated file while reading ") + what);
    }
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    get_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is, const char* what) {
    const std::uint64_t bits = get_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void put_f64_block(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) put_f64(os, x);
}

inline void get_f64_block(std::istream& is, std::vector<double>& v, std::size_t n, const char* what) {
    v.resize(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get_f64(is, what);
}

} // namespace mlmsda::binio

#endif // MLMSDA_BINIO_HPP
