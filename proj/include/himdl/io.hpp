#pragma once

// Little-endian binary readers/writers shared by the dataset and checkpoint
// containers. Streams throw IoError on short reads or bad magic.

#include <himdl/common.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swapping for this target");

namespace himdl::io {

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
    if (!out) throw IoError("io: write failed");
}

template <class T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("io: unexpected end of file");
    return v;
}

inline void write_f64_array(std::ostream& out, std::span<const double> xs) {
    write_pod<std::uint64_t>(out, xs.size());
    out.write(reinterpret_cast<const char*>(xs.data()),
              static_cast<std::streamsize>(xs.size() * sizeof(double)));
    if (!out) throw IoError("io: write failed");
}

inline std::vector<double> read_f64_array(std::istream& in) {
    const auto n = read_pod<std::uint64_t>(in);
    std::vector<double> xs(n);
    in.read(reinterpret_cast<char*>(xs.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("io: unexpected end of file");
    return xs;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) {
    out.write(magic, 8);
    if (!out) throw IoError("io: write failed");
}

inline void expect_magic(std::istream& in, const char (&magic)[9],
                         const std::string& what) {
    char buf[8];
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic, 8) != 0)
        throw IoError(what + ": bad magic header");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("io: cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("io: cannot open for reading: " + path);
    return in;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("io: cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("io: write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("io: cannot open for reading: " + path);
    std::string s((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
    return s;
}

}  // namespace himdl::io
