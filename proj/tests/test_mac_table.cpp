#include <gtest/gtest.h>

#include "ccfi/mac_table.hpp"
#include "ccfi/memory.hpp"

using namespace ccfi;
namespace layout = ccfi::vm::layout;

namespace {

MacValue filled(std::uint8_t b) {
    MacValue v;
    v.bytes.fill(b);
    return v;
}

} // namespace

TEST(SlotOf, DropsGranuleBitsAndWraps) {
    EXPECT_EQ(slot_of(0x0, 16), 0u);
    EXPECT_EQ(slot_of(0x8, 16), 1u);
    EXPECT_EQ(slot_of(0xf, 16), 1u);
    EXPECT_EQ(slot_of(0x80, 16), 0u);
    EXPECT_EQ(slot_of(0x2000'0018, 1024), 3u);
}

TEST(MacTableConfig, ParsesModes) {
    EXPECT_EQ(MacTableConfig::parse("exact").mode, MacTableConfig::Mode::ExactMap);
    const auto d = MacTableConfig::parse("direct:256");
    EXPECT_EQ(d.mode, MacTableConfig::Mode::DirectMapped);
    EXPECT_EQ(d.size, 256u);
    EXPECT_EQ(d.to_string(), "direct:256");
    EXPECT_THROW(MacTableConfig::parse("direct:100"), std::invalid_argument);
    EXPECT_THROW(MacTableConfig::parse("direct:"), std::invalid_argument);
    EXPECT_THROW(MacTableConfig::parse("hash"), std::invalid_argument);
}

TEST(ExactMap, SlotIsLinearShadow) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::exact());
    EXPECT_EQ(t.slot_address(0x2000'0000), layout::kShadowBase + (0x2000'0000ull >> 3) * 16);
    EXPECT_EQ(t.slot_address(0x2000'0008) - t.slot_address(0x2000'0000), 16u);
}

TEST(ExactMap, NeighboursNeverCollide) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::exact());
    for (std::uint64_t i = 0; i < 64; ++i)
        t.store(0x2000'0000 + 8 * i, filled(static_cast<std::uint8_t>(i + 1)));
    for (std::uint64_t i = 0; i < 64; ++i) {
        auto v = t.load(0x2000'0000 + 8 * i);
        ASSERT_TRUE(v);
        EXPECT_EQ(*v, filled(static_cast<std::uint8_t>(i + 1)));
    }
    EXPECT_EQ(t.stats().collisions, 0u);
}

TEST(ExactMap, EmptySlotReadsAbsent) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::exact());
    EXPECT_FALSE(t.load(0x3000'0000));
    EXPECT_EQ(t.stats().misses, 1u);
}

TEST(DirectMapped, AliasesOverwriteEachOther) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::direct(16));
    const std::uint64_t a = 0x2000'0000, b = a + 16 * 8;
    ASSERT_EQ(t.slot_address(a), t.slot_address(b));
    t.store(a, filled(1));
    t.store(b, filled(2));
    EXPECT_EQ(t.stats().collisions, 1u);
    EXPECT_EQ(*t.load(a), filled(2));
}

TEST(DirectMapped, RestoringOwnerIsNotACollision) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::direct(16));
    t.store(0x2000'0000, filled(1));
    t.store(0x2000'0000, filled(3));
    EXPECT_EQ(t.stats().collisions, 0u);
    EXPECT_EQ(t.slot_address(0x2000'0000), layout::kDirectTableBase);
}

TEST(MacTable, LivesInWritableGuestMemory) {
    vm::Memory mem;
    MacTable t(mem, MacTableConfig::exact());
    const auto slot = t.slot_address(0x2000'0000);
    mem.write_u64(slot, 0x1234);
    auto v = t.load(0x2000'0000);
    ASSERT_TRUE(v);
    EXPECT_EQ(v->bytes[0], 0x34);
}
