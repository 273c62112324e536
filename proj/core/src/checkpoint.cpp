#include "clicooper/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace clicooper::io {

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v));
    b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& b, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(b, bits);
}

void ByteReader::need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("decode: truncated input");
}

uint8_t ByteReader::u8() {
    need(1);
    return buf[pos++];
}

uint16_t ByteReader::u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(buf[pos]) | static_cast<uint16_t>(buf[pos + 1]) << 8;
    pos += 2;
    return v;
}

uint32_t ByteReader::u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[pos + i];
    pos += 4;
    return v;
}

uint64_t ByteReader::u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[pos + i];
    pos += 8;
    return v;
}

double ByteReader::f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void ByteReader::expect_end() const {
    if (pos != buf.size()) throw std::runtime_error("decode: trailing bytes");
}

void encode_tensor(std::vector<uint8_t>& out, const TensorF64& t) {
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (uint32_t d : t.shape) put_u32(out, d);
    for (double v : t.values) put_f64(out, v);
}

TensorF64 decode_tensor(ByteReader& r) {
    uint32_t rank = r.u32();
    if (rank > 8) throw std::runtime_error("decode_tensor: implausible rank");
    std::vector<uint32_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = r.u32();
    size_t n = shape_product(shape);
    std::vector<double> values(n);
    for (size_t i = 0; i < n; ++i) values[i] = r.f64();
    return TensorF64(std::move(shape), std::move(values));
}

std::vector<uint8_t> segment_to_bytes(const nn::Segment& s) {
    s.validate();
    if (s.layers.size() > 0xffff) throw std::invalid_argument("checkpoint: too many layers");
    std::vector<uint8_t> b;
    b.push_back('C');
    b.push_back('L');
    b.push_back('W');
    b.push_back('C');
    put_u16(b, kCheckpointVersion);
    put_u16(b, static_cast<uint16_t>(s.layers.size()));
    for (const auto& l : s.layers) {
        put_u32(b, l.in_dim());
        put_u32(b, l.out_dim());
        put_u8(b, static_cast<uint8_t>(l.activation));
        for (double w : l.weight.values) put_f64(b, w);
        for (double v : l.bias) put_f64(b, v);
    }
    return b;
}

nn::Segment segment_from_bytes(const std::vector<uint8_t>& bytes) {
    ByteReader r{bytes};
    if (r.u8() != 'C' || r.u8() != 'L' || r.u8() != 'W' || r.u8() != 'C')
        throw std::runtime_error("checkpoint: bad magic");
    uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint16_t nlayers = r.u16();
    nn::Segment s;
    for (uint16_t i = 0; i < nlayers; ++i) {
        uint32_t in = r.u32();
        uint32_t out = r.u32();
        nn::DenseLayer l;
        l.activation = nn::activation_from_code(r.u8());
        l.weight = TensorF64::zeros({out, in});
        for (double& w : l.weight.values) w = r.f64();
        l.bias.resize(out);
        for (double& v : l.bias) v = r.f64();
        s.layers.push_back(std::move(l));
    }
    r.expect_end();
    s.frozen = true;
    s.reset_velocity();
    s.validate();
    return s;
}

void save_checkpoint(const nn::Segment& s, const std::string& path) {
    write_file(path, segment_to_bytes(s));
}

nn::Segment load_checkpoint(const std::string& path) { return segment_from_bytes(read_file(path)); }

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

} // namespace clicooper::io
