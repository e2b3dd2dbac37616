#include <random>

#include <gtest/gtest.h>

#include "ccfi/aes128.hpp"
#include "ccfi/mac.hpp"
#include "ccfi/prng.hpp"
#include "support.hpp"

using namespace ccfi;
using ccfi::test::from_hex;

namespace {

std::array<std::uint8_t, 16> key_from_hex(const std::string &hex) { return from_hex(hex); }

} // namespace

TEST(Aes128, Fips197AppendixB) {
    const auto key = key_from_hex("2b7e151628aed2a6abf7158809cf4f3c");
    crypto::Aes128 aes(key);
    EXPECT_EQ(aes.encrypt(from_hex("3243f6a8885a308d313198a2e0370734")),
              from_hex("3925841d02dc09fbdc118597196a0b32"));
}

TEST(Aes128, Fips197AppendixC1) {
    const auto key = key_from_hex("000102030405060708090a0b0c0d0e0f");
    crypto::Aes128 aes(key);
    EXPECT_EQ(aes.encrypt(from_hex("00112233445566778899aabbccddeeff")),
              from_hex("69c4e0d86a7b0430d8cdb78070b4c55a"));
}

TEST(Aes128, AgreesWithOpenSslOnRandomPairs) {
    std::mt19937_64 rng(20240611);
    for (int i = 0; i < 1000; ++i) {
        std::array<std::uint8_t, 16> key{};
        crypto::Block in{};
        for (auto &b : key)
            b = static_cast<std::uint8_t>(rng());
        for (auto &b : in)
            b = static_cast<std::uint8_t>(rng());
        ASSERT_EQ(crypto::Aes128(key).encrypt(in), test::openssl_aes128(key, in)) << "pair " << i;
    }
}

TEST(Mac, BlockIsLittleEndianPointerThenClass) {
    const auto key = key_from_hex("000102030405060708090a0b0c0d0e0f");
    const auto block = mac_block(0x7766554433221100ull, 0xffeeddccbbaa9988ull);
    EXPECT_EQ(block, from_hex("00112233445566778899aabbccddeeff"));

    MacKey k{key};
    ClassTag cls;
    cls.value = 0xffeeddccbbaa9988ull;
    EXPECT_EQ(mac(k, 0x7766554433221100ull, cls).bytes,
              from_hex("69c4e0d86a7b0430d8cdb78070b4c55a"));
}

TEST(Mac, MatchesReferenceForEveryKind) {
    Prng prng(7);
    const MacKey key = generate_key(prng);
    for (auto kind : {PointerKind::ReturnAddress, PointerKind::FunctionPointer,
                      PointerKind::VTablePointer, PointerKind::ManualData}) {
        const auto cls = encode_class(kind, 0x1234'5678'9ab8ull);
        EXPECT_EQ(mac(key, 0x410000, cls).bytes,
                  test::reference_mac(key.bytes, 0x410000, cls.value));
        EXPECT_TRUE(verify(key, 0x410000, cls, mac(key, 0x410000, cls)));
        EXPECT_FALSE(verify(key, 0x410008, cls, mac(key, 0x410000, cls)));
    }
}

TEST(ClassTag, ReturnAddressKeepsDomainBitClear) {
    const auto cls = encode_class(PointerKind::ReturnAddress, 0x1fff'ffff'fff0ull);
    EXPECT_EQ(cls.value, 0x1fff'ffff'fff0ull);
}

TEST(ClassTag, OtherKindsSetDomainBit) {
    for (auto kind :
         {PointerKind::FunctionPointer, PointerKind::VTablePointer, PointerKind::ManualData})
        EXPECT_EQ(encode_class(kind, 0x2000'0000ull).value, 0x8000'0000'2000'0000ull);
}

TEST(ClassTag, SignatureHashSitsAboveTheAddress) {
    const auto cls = encode_class(PointerKind::FunctionPointer, 0x2000'0008ull, 0x7abc);
    EXPECT_EQ(cls.value, 0x8000'0000'0000'0000ull | (0x7abcull << 48) | 0x2000'0008ull);
    ASSERT_TRUE(cls.sig_hash);
    EXPECT_EQ(*cls.sig_hash, 0x7abc);
}

TEST(ClassTag, SignatureHashIgnoredForOtherKinds) {
    const auto cls = encode_class(PointerKind::VTablePointer, 0x2000'0008ull, 0x7abc);
    EXPECT_EQ(cls.value, 0x8000'0000'2000'0008ull);
    EXPECT_FALSE(cls.sig_hash);
}

TEST(ClassTag, SignatureHashTruncatedTo15Bits) {
    const auto cls = encode_class(PointerKind::FunctionPointer, 0x10, 0xffff);
    EXPECT_EQ(cls.value, 0xffff'0000'0000'0010ull);
}

TEST(ClassTag, RejectsAddressesAbove48Bits) {
    EXPECT_THROW(encode_class(PointerKind::FunctionPointer, 1ull << 48), InvalidAddress);
    EXPECT_NO_THROW(encode_class(PointerKind::FunctionPointer, (1ull << 48) - 1));
}

TEST(ClassTag, DomainsNeverCollideAtOneAddress) {
    const std::uint64_t a = 0x1fff'ffff'ff00ull;
    EXPECT_NE(encode_class(PointerKind::ReturnAddress, a).value,
              encode_class(PointerKind::FunctionPointer, a).value);
}

TEST(SignatureHash, FoldsFnv1a) {
    // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c; fold 15-bit chunks by xor.
    std::uint64_t h = 0xaf63dc4c8601ec8cull, folded = 0;
    while (h) {
        folded ^= h & 0x7fff;
        h >>= 15;
    }
    EXPECT_EQ(signature_hash("a"), folded);
    EXPECT_LE(signature_hash("fn(i64)->i64"), 0x7fff);
    EXPECT_NE(signature_hash("fn(i64)->i64"), signature_hash("fn(i64, i64)->i64"));
}

TEST(Prng, DeterministicPerSeed) {
    Prng a(5), b(5);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(a.next(), b.next());
    EXPECT_NE(Prng(5).next(), Prng(6).next());
}

TEST(Prng, ZeroBitDrawDoesNotAdvance) {
    Prng z(1), z2(1);
    EXPECT_EQ(z.draw(0), 0u);
    EXPECT_EQ(z.next(), z2.next());
}

TEST(Prng, DrawStaysInRange) {
    Prng p(3);
    for (int i = 0; i < 10000; ++i)
        ASSERT_LT(p.draw(4), 16u);
}

TEST(Mac, KeysDifferAcrossSeeds) {
    Prng a(1), b(2);
    EXPECT_NE(generate_key(a), generate_key(b));
}
