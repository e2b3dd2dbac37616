#include "ccfi/mac.hpp"

#include <cstdio>

namespace ccfi {

std::string_view to_string(PointerKind kind) noexcept {
    switch (kind) {
    case PointerKind::ReturnAddress: return "return";
    case PointerKind::FunctionPointer: return "fptr";
    case PointerKind::VTablePointer: return "vtable";
    case PointerKind::ManualData: return "data";
    }
    return "?";
}

namespace {
std::string format_address(std::uint64_t address) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "address 0x%llx exceeds 48 bits",
                  static_cast<unsigned long long>(address));
    return buf;
}
} // namespace

InvalidAddress::InvalidAddress(std::uint64_t address)
    : std::invalid_argument(format_address(address)), address_(address) {}

bool MacValue::is_zero() const noexcept {
    std::uint8_t acc = 0;
    for (auto b : bytes)
        acc |= b;
    return acc == 0;
}

MacKey generate_key(Prng &prng) noexcept {
    MacKey key;
    for (int half = 0; half < 2; ++half) {
        const std::uint64_t word = prng.next();
        for (int i = 0; i < 8; ++i)
            key.bytes[8 * half + i] = static_cast<std::uint8_t>(word >> (8 * i));
    }
    return key;
}

ClassTag encode_class(PointerKind kind, std::uint64_t payload_address,
                      std::optional<std::uint16_t> sig_hash) {
    if (payload_address > kAddressMask)
        throw InvalidAddress(payload_address);
    ClassTag tag;
    tag.kind = kind;
    tag.payload_address = payload_address;
    tag.value = payload_address;
    if (kind != PointerKind::ReturnAddress)
        tag.value |= kDomainBit;
    if (kind == PointerKind::FunctionPointer && sig_hash) {
        tag.sig_hash = static_cast<std::uint16_t>(*sig_hash & kSigHashMask);
        tag.value |= std::uint64_t{*tag.sig_hash} << kAddressBits;
    }
    return tag;
}

crypto::Block mac_block(std::uint64_t pointer, std::uint64_t class_value) noexcept {
    crypto::Block block{};
    for (int i = 0; i < 8; ++i) {
        block[i] = static_cast<std::uint8_t>(pointer >> (8 * i));
        block[8 + i] = static_cast<std::uint8_t>(class_value >> (8 * i));
    }
    return block;
}

MacValue mac(const crypto::Aes128 &cipher, std::uint64_t pointer,
             const ClassTag &cls) noexcept {
    return MacValue{cipher.encrypt(mac_block(pointer, cls.value))};
}

MacValue mac(const MacKey &key, std::uint64_t pointer, const ClassTag &cls) noexcept {
    return mac(crypto::Aes128(key.bytes), pointer, cls);
}

bool verify(const MacKey &key, std::uint64_t pointer, const ClassTag &cls,
            const MacValue &expected) noexcept {
    return verify(crypto::Aes128(key.bytes), pointer, cls, expected);
}

bool verify(const crypto::Aes128 &cipher, std::uint64_t pointer, const ClassTag &cls,
            const MacValue &expected) noexcept {
    const MacValue actual = mac(cipher, pointer, cls);
    std::uint8_t diff = 0;
    for (std::size_t i = 0; i < actual.bytes.size(); ++i)
        diff |= actual.bytes[i] ^ expected.bytes[i];
    return diff == 0;
}

std::uint16_t signature_hash(std::string_view canonical_signature) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical_signature) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::uint64_t folded = 0;
    for (unsigned shift = 0; shift < 64; shift += kSigHashBits)
        folded ^= h >> shift;
    return static_cast<std::uint16_t>(folded & kSigHashMask);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

} // namespace ccfi
