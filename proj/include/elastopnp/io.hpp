#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "elastopnp/error.hpp"
#include "elastopnp/grid.hpp"

namespace elastopnp {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::uint32_t crc32_of(const std::vector<std::uint8_t> &bytes, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < len) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(len - off, 1u << 30));
        crc = crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

/// Little-endian append-only byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    template <class T>
    void put(T v) {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        buf_.insert(buf_.end(), raw, raw + sizeof(T));
    }
    // Appends the CRC32 of everything written so far.
    void seal() { put<std::uint32_t>(crc32_of(buf_, buf_.size())); }
    const std::vector<std::uint8_t> &data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data, std::string what)
        : buf_(std::move(data)), what_(std::move(what)) {}

    void expect_magic(std::string_view magic) {
        need(magic.size());
        if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
            throw IoError(what_ + ": bad magic (expected \"" + std::string(magic) + "\")");
        pos_ += magic.size();
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    // Verifies the trailing CRC32 over all preceding bytes; must be the last read.
    void verify_crc() {
        const std::size_t body = pos_;
        const auto stored = get<std::uint32_t>();
        if (stored != crc32_of(buf_, body)) throw IoError(what_ + ": CRC mismatch");
        if (pos_ != buf_.size()) throw IoError(what_ + ": trailing bytes after CRC");
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw IoError(what_ + ": truncated file");
    }
    std::vector<std::uint8_t> buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a temporary sibling and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path &path, const void *data, std::size_t size) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(static_cast<const char *>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_text_atomic(const std::filesystem::path &path, const std::string &text) {
    write_file_atomic(path, text.data(), text.size());
}

/// Multi-channel grid: payload index (r*cols + c)*channels + ch.
struct GridFile {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t channels = 1;
    std::vector<double> values;

    static GridFile from_grid(const Grid &g) {
        GridFile f;
        f.rows = static_cast<std::uint32_t>(g.rows());
        f.cols = static_cast<std::uint32_t>(g.cols());
        f.values.assign(g.data(), g.data() + g.size());
        return f;
    }

    Grid channel(std::uint32_t ch) const {
        if (ch >= channels) throw InvalidArgument("GridFile: channel out of range");
        Grid g(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c)
                g(r, c) = values[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
        return g;
    }
};

inline constexpr std::string_view grid_magic = "EPNPGRD1";

inline std::vector<std::uint8_t> encode_grid(const GridFile &g) {
    if (g.values.size() != static_cast<std::size_t>(g.rows) * g.cols * g.channels)
        throw InvalidArgument("GridFile: payload length does not match rows*cols*channels");
    ByteWriter w;
    w.bytes(grid_magic);
    w.put(g.rows);
    w.put(g.cols);
    w.put(g.channels);
    for (double v : g.values) w.put(v);
    w.seal();
    return w.data();
}

inline GridFile decode_grid(std::vector<std::uint8_t> bytes, const std::string &what = "grid file") {
    ByteReader r(std::move(bytes), what);
    r.expect_magic(grid_magic);
    GridFile g;
    g.rows = r.get<std::uint32_t>();
    g.cols = r.get<std::uint32_t>();
    g.channels = r.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(g.rows) * g.cols * g.channels;
    if (r.remaining() != n * 8 + 4) throw IoError(what + ": payload length does not match header");
    g.values.resize(n);
    for (auto &v : g.values) v = r.get<double>();
    r.verify_crc();
    return g;
}

inline void write_grid(const std::filesystem::path &path, const GridFile &g) { write_file_atomic(path, encode_grid(g)); }

inline GridFile read_grid(const std::filesystem::path &path) { return decode_grid(read_file(path), path.string()); }

} // namespace elastopnp
