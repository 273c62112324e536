#include "clicooper/sha256.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <stdexcept>

namespace clicooper {

Sha256::Sha256() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("Sha256: init failed");
    }
    ctx_ = ctx;
}

Sha256::~Sha256() {
    if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(const void* data, size_t len) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1)
        throw std::runtime_error("Sha256: update failed");
}

void Sha256::update_u32le(uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    update(b, 4);
}

void Sha256::update_u64le(uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    update(b, 8);
}

void Sha256::update_f64le(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    update_u64le(bits);
}

Digest32 Sha256::finalize() {
    Digest32 out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 || len != 32)
        throw std::runtime_error("Sha256: finalize failed");
    return out;
}

Digest32 sha256(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.finalize();
}

std::string hex(const Digest32& d) {
    static const char* k = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : d) {
        s.push_back(k[b >> 4]);
        s.push_back(k[b & 0xf]);
    }
    return s;
}

Digest32 digest_from_hex(const std::string& s) {
    if (s.size() != 64) throw std::invalid_argument("digest_from_hex: need 64 hex chars");
    auto nib = [](char c) -> uint8_t {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("digest_from_hex: bad hex char");
    };
    Digest32 d{};
    for (size_t i = 0; i < 32; ++i) d[i] = static_cast<uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
    return d;
}

uint64_t seed_from_bytes(const std::vector<uint8_t>& bytes) {
    Digest32 d = sha256(bytes.data(), bytes.size());
    uint64_t s = 0;
    for (int i = 7; i >= 0; --i) s = (s << 8) | d[i];
    return s;
}

} // namespace clicooper
