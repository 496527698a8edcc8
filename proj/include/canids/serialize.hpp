#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace canids::io {

// Little-endian binary helpers shared by the frame and checkpoint containers.
// Serialization is byte-by-byte so the on-disk layout does not depend on host
// endianness.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw std::runtime_error("unexpected end of file");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_unsigned_v<T>);
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(std::is_unsigned_v<T>);
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<uint32_t>(os, bits);
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_le<uint32_t>(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    if (s.size() > 0xffff) throw std::invalid_argument("string too long for u16 length prefix");
    write_le<uint16_t>(os, static_cast<uint16_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_str(std::istream& is) {
    uint16_t n = read_le<uint16_t>(is);
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

// FNV-1a, used for checkpoint fingerprints and payload checksums.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = UINT64_C(14695981039346656037)) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= UINT64_C(1099511628211);
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace canids::io
