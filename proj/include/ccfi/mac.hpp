#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ccfi/aes128.hpp"
#include "ccfi/prng.hpp"

namespace ccfi {

/// Only the low 48 bits of a virtual address are significant.
inline constexpr std::uint64_t kAddressBits = 48;
inline constexpr std::uint64_t kAddressMask = (std::uint64_t{1} << kAddressBits) - 1;
inline constexpr std::uint64_t kDomainBit = std::uint64_t{1} << 63;
inline constexpr unsigned kSigHashBits = 15;
inline constexpr std::uint64_t kSigHashMask = (std::uint64_t{1} << kSigHashBits) - 1;

enum class PointerKind : std::uint8_t {
    ReturnAddress,
    FunctionPointer,
    VTablePointer,
    ManualData,
};

std::string_view to_string(PointerKind kind) noexcept;

class InvalidAddress : public std::invalid_argument {
public:
    explicit InvalidAddress(std::uint64_t address);
    std::uint64_t address() const noexcept { return address_; }

private:
    std::uint64_t address_;
};

struct MacKey {
    std::array<std::uint8_t, 16> bytes{};
    friend bool operator==(const MacKey &, const MacKey &) = default;
};

struct MacValue {
    std::array<std::uint8_t, 16> bytes{};

    bool is_zero() const noexcept;
    friend bool operator==(const MacValue &, const MacValue &) = default;
};

/// The 64-bit context bound into a MAC.
///
/// Layout of `value`:
///   bit 63      domain bit: 0 for return addresses, 1 for everything else
///   bits 62..48 optional type-signature hash (function pointers only)
///   bits 47..0  payload address: old frame address for returns, storage
///               address otherwise
struct ClassTag {
    std::uint64_t value = 0;
    PointerKind kind = PointerKind::FunctionPointer;
    std::uint64_t payload_address = 0;
    std::optional<std::uint16_t> sig_hash;

    friend bool operator==(const ClassTag &, const ClassTag &) = default;
};

/// Draws a fresh 16-byte key from the reserved-register PRNG.
MacKey generate_key(Prng &prng) noexcept;

/// Throws InvalidAddress if `payload_address` does not fit in 48 bits.
/// A sig_hash is only meaningful for function pointers and is dropped for
/// every other kind; it is truncated to 15 bits.
ClassTag encode_class(PointerKind kind, std::uint64_t payload_address,
                      std::optional<std::uint16_t> sig_hash = std::nullopt);

/// Pointer in bytes 0..7 and class in bytes 8..15, both little-endian.
crypto::Block mac_block(std::uint64_t pointer, std::uint64_t class_value) noexcept;

MacValue mac(const MacKey &key, std::uint64_t pointer, const ClassTag &cls) noexcept;
/// Same as above with an already expanded key schedule.
MacValue mac(const crypto::Aes128 &cipher, std::uint64_t pointer,
             const ClassTag &cls) noexcept;

/// Comparison touches every byte regardless of where a mismatch occurs.
bool verify(const MacKey &key, std::uint64_t pointer, const ClassTag &cls,
            const MacValue &expected) noexcept;
bool verify(const crypto::Aes128 &cipher, std::uint64_t pointer, const ClassTag &cls,
            const MacValue &expected) noexcept;

/// FNV-1a 64 over the canonical signature string, xor-folded to 15 bits.
std::uint16_t signature_hash(std::string_view canonical_signature) noexcept;

std::string to_hex(std::span<const std::uint8_t> bytes);

} // namespace ccfi
