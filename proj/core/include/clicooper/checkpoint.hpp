#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clicooper/nn.hpp"
#include "clicooper/tensor.hpp"

namespace clicooper::io {

// Little-endian byte helpers shared by the checkpoint, cache, and wire codecs.
void put_u8(std::vector<uint8_t>& b, uint8_t v);
void put_u16(std::vector<uint8_t>& b, uint16_t v);
void put_u32(std::vector<uint8_t>& b, uint32_t v);
void put_u64(std::vector<uint8_t>& b, uint64_t v);
void put_f64(std::vector<uint8_t>& b, double v);

struct ByteReader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    double f64();
    void expect_end() const;

private:
    void need(size_t n) const;
};

/// Tensor encoding: u32 rank, rank x u32 dims, values as LE f64.
void encode_tensor(std::vector<uint8_t>& out, const TensorF64& t);
TensorF64 decode_tensor(ByteReader& r);

/// Segment checkpoint ("CLWC"): magic, format version u16, layer count u16,
/// then per layer (in u32, out u32, activation code u8, weights row-major,
/// bias), all f64 little-endian. Round-trips bit-exactly.
std::vector<uint8_t> segment_to_bytes(const nn::Segment& s);
nn::Segment segment_from_bytes(const std::vector<uint8_t>& bytes);

void save_checkpoint(const nn::Segment& s, const std::string& path);
/// Loaded checkpoints come back frozen; they are finished artifacts.
nn::Segment load_checkpoint(const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

inline constexpr uint16_t kCheckpointVersion = 1;

} // namespace clicooper::io
