#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace clicooper {

using Digest32 = std::array<uint8_t, 32>;

/// Incremental SHA-256 (thin wrapper over the system crypto provider).
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t len);
    void update_u32le(uint32_t v);
    void update_u64le(uint64_t v);
    void update_f64le(double v);

    Digest32 finalize();

private:
    void* ctx_;
};

Digest32 sha256(const void* data, size_t len);
std::string hex(const Digest32& d);
Digest32 digest_from_hex(const std::string& s);

/// First 8 bytes of SHA-256(bytes), little-endian — the canonical way a
/// byte-string seed (e.g. a chain hash plus a domain tag) keys a CounterRng.
uint64_t seed_from_bytes(const std::vector<uint8_t>& bytes);

} // namespace clicooper
