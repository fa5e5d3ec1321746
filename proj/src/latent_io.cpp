#include "ringlab/latent_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ringlab {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::string& buf, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

class Reader {
  public:
    Reader(const std::string& path, const char* magic) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw io_error("cannot open " + path);
        char m[4];
        in_.read(m, 4);
        if (!in_ || std::memcmp(m, magic, 4) != 0)
            throw io_error(path + ": bad magic, expected " + magic);
    }

    std::uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    double f64() {
        unsigned char b[8];
        read(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return std::bit_cast<double>(v);
    }

    void expect_eof() {
        if (in_.peek() != std::ifstream::traits_type::eof())
            throw io_error(path_ + ": trailing bytes");
    }

  private:
    void read(unsigned char* p, std::size_t n) {
        in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw io_error(path_ + ": truncated file");
    }

    std::string path_;
    std::ifstream in_;
};

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path);
}

constexpr std::uint32_t kMaxDim = 1u << 16;

void check_dims(std::uint32_t c, std::uint32_t h, std::uint32_t w, const std::string& path) {
    if (c < 1 || h < 1 || w < 1 || c > kMaxDim || h > kMaxDim || w > kMaxDim)
        throw io_error(path + ": unreasonable dimensions in header");
}

}  // namespace

void write_latent(const std::string& path, const LatentGrid& g) {
    std::string buf;
    buf.reserve(16 + g.size() * 8);
    buf += "RLT1";
    put_u32(buf, static_cast<std::uint32_t>(g.channels));
    put_u32(buf, static_cast<std::uint32_t>(g.height));
    put_u32(buf, static_cast<std::uint32_t>(g.width));
    for (double v : g.data) put_f64(buf, v);
    write_file(path, buf);
}

LatentGrid read_latent(const std::string& path) {
    Reader r(path, "RLT1");
    std::uint32_t c = r.u32(), h = r.u32(), w = r.u32();
    check_dims(c, h, w, path);
    LatentGrid g(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (double& v : g.data) v = r.f64();
    r.expect_eof();
    return g;
}

void write_complex(const std::string& path, const ComplexGrid& g) {
    std::string buf;
    buf.reserve(16 + g.size() * 16);
    buf += "RLC1";
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(g.height));
    put_u32(buf, static_cast<std::uint32_t>(g.width));
    for (const cplx& v : g.data) put_f64(buf, v.real());
    for (const cplx& v : g.data) put_f64(buf, v.imag());
    write_file(path, buf);
}

ComplexGrid read_complex(const std::string& path) {
    Reader r(path, "RLC1");
    std::uint32_t c = r.u32(), h = r.u32(), w = r.u32();
    check_dims(c, h, w, path);
    if (c != 1) throw io_error(path + ": complex files carry a single plane");
    ComplexGrid g(static_cast<int>(h), static_cast<int>(w));
    for (cplx& v : g.data) v = cplx(r.f64(), 0.0);
    for (cplx& v : g.data) v = cplx(v.real(), r.f64());
    r.expect_eof();
    return g;
}

}  // namespace ringlab
