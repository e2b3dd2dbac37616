#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace ccfi::crypto {

using Block = std::array<std::uint8_t, 16>;

/// Portable AES-128 encryption (FIPS-197). Only the forward direction is
/// needed: MACs are recomputed and compared, never decrypted.
class Aes128 {
public:
    explicit Aes128(std::span<const std::uint8_t, 16> key) noexcept;

    Block encrypt(const Block &in) const noexcept;

private:
    // 11 round keys of 16 bytes each.
    std::array<std::uint8_t, 176> round_keys_{};
};

} // namespace ccfi::crypto
