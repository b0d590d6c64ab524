#pragma once

// Little-endian helpers shared by the file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lungad/error.hpp"

namespace lungad::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_span(std::ostream& os, std::span<const T> v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

// Sequential reader over an in-memory buffer; every read is bounds checked.
class ByteReader {
public:
    explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t position() const { return pos_; }

    template <typename T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    std::string get_string(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
    template <typename T>
    void get_span(std::span<T> out) {
        take(out.data(), out.size_bytes());
    }

private:
    void take(void* dst, std::size_t n) {
        if (remaining() < n) throw ValidationError("payload size mismatch");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + path.string());
    return out;
}

// Splits "<json header>\n<binary payload>" files used by EMB1, GMM1 and NF1.
inline std::pair<std::string, std::span<const char>> split_header_line(const std::vector<char>& buf) {
    auto nl = std::find(buf.begin(), buf.end(), '\n');
    if (nl == buf.end()) throw ValidationError("missing header line");
    std::string header(buf.begin(), nl);
    std::span<const char> rest(buf.data() + (nl - buf.begin()) + 1, buf.end() - nl - 1);
    return {header, rest};
}

} // namespace lungad::detail
