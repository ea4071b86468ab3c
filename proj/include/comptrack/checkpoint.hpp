#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "comptrack/errors.hpp"
#include "comptrack/params.hpp"

namespace comptrack {

// Checkpoint format "CTK1": the 4-byte magic, then one record per parameter
// in store order: u32 name length, name bytes, u32 rows, u32 cols, then
// rows*cols little-endian float64 values. Round-trips bit-exactly.
namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4] = {0, 0, 0, 0};
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("CTK1", 4);
    for (const std::string& name : store.names()) {
        const DenseMatrix& m = store.value(name);
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(m.rows));
        detail::write_u32(os, static_cast<std::uint32_t>(m.cols));
        for (double v : m.data) detail::write_f64(os, v);
    }
    if (!os) throw DataError("write failed: " + path);
}

// Loads records into an existing store; every record must match a known
// parameter's shape, and every parameter must be present.
inline void load_checkpoint(const std::string& path, ParamStore& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CTK1")
        throw DataError("bad checkpoint magic in " + path);
    size_t loaded = 0;
    while (true) {
        const std::uint32_t name_len = detail::read_u32(is);
        if (is.eof()) break;
        if (!is || name_len > 4096) throw DataError("corrupt checkpoint record in " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rows = detail::read_u32(is);
        const std::uint32_t cols = detail::read_u32(is);
        if (!is) throw DataError("truncated checkpoint record in " + path);
        if (!store.has(name)) throw DataError("checkpoint has unknown parameter: " + name);
        DenseMatrix& m = store.value(name);
        if (m.rows != static_cast<int>(rows) || m.cols != static_cast<int>(cols))
            throw DataError("checkpoint shape mismatch for " + name);
        for (double& v : m.data) v = detail::read_f64(is);
        if (!is) throw DataError("truncated checkpoint data for " + name);
        ++loaded;
        is.peek();  // trigger eof at a record boundary
        if (is.eof()) break;
    }
    if (loaded != store.count())
        throw DataError("checkpoint is missing parameters (" + std::to_string(loaded) + " of " +
                        std::to_string(store.count()) + ")");
}

}  // namespace comptrack
