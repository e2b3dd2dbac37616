#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ccfi::vm {

/// Fixed guest address map. Program data stays below 2^46 so that the
/// exact-map shadow region (2 bytes of shadow per byte of data) fits in the
/// 48-bit address space.
namespace layout {
inline constexpr std::uint64_t kCodeBase = 0x0000'0000'0040'0000;
inline constexpr std::uint64_t kFunctionStride = 0x1'0000;
inline constexpr std::uint64_t kInstrBytes = 8;
/// Return target of the outermost frames; returning here ends the entry.
inline constexpr std::uint64_t kExitAddress = kCodeBase;
inline constexpr std::uint64_t kRodataBase = 0x0000'0000'1000'0000;
inline constexpr std::uint64_t kDataBase = 0x0000'0000'2000'0000;
inline constexpr std::uint64_t kHeapBase = 0x0000'0000'3000'0000;
inline constexpr std::uint64_t kHeapSize = 0x0000'0000'0400'0000;
inline constexpr std::uint64_t kStackTop = 0x0000'2000'0000'0000;
inline constexpr std::uint64_t kStackSize = 0x0000'0000'0010'0000;
inline constexpr std::uint64_t kStackBase = kStackTop - kStackSize;
inline constexpr std::uint64_t kDirectTableBase = 0x0000'6000'0000'0000;
inline constexpr std::uint64_t kShadowBase = 0x0000'8000'0000'0000;
inline constexpr std::uint64_t kShadowSize = 0x0000'8000'0000'0000;
} // namespace layout

struct Region {
    std::string name;
    std::uint64_t base = 0;
    std::uint64_t size = 0;
    bool writable = false;

    bool contains(std::uint64_t addr) const noexcept {
        return addr >= base && addr - base < size;
    }
};

class MemoryFault : public std::runtime_error {
public:
    MemoryFault(std::uint64_t address, const std::string &what);
    std::uint64_t address() const noexcept { return address_; }

private:
    std::uint64_t address_;
};

/// Sparse byte-addressed guest memory. Pages are allocated on first write
/// and read as zero until then.
class Memory {
public:
    static constexpr std::uint64_t kPageSize = 4096;

    void map(Region region);
    const Region *region_of(std::uint64_t addr) const noexcept;
    bool is_mapped(std::uint64_t addr, std::uint64_t len) const noexcept;
    bool overlaps_readonly(std::uint64_t addr, std::uint64_t len) const noexcept;
    const std::vector<Region> &regions() const noexcept { return regions_; }

    /// Checked accesses: fault on unmapped bytes, and on writes to read-only
    /// regions.
    void read(std::uint64_t addr, std::span<std::uint8_t> out) const;
    void write(std::uint64_t addr, std::span<const std::uint8_t> bytes);
    std::uint64_t read_u64(std::uint64_t addr) const;
    void write_u64(std::uint64_t addr, std::uint64_t value);

    /// Loader access: ignores write protection.
    void poke(std::uint64_t addr, std::span<const std::uint8_t> bytes);
    void poke_u64(std::uint64_t addr, std::uint64_t value);

    /// Searches every materialized page for `pattern`, including matches
    /// that straddle adjacent pages.
    std::size_t count_occurrences(std::span<const std::uint8_t> pattern) const;

    /// Visits materialized pages in address order.
    template <typename Fn> void for_each_page(Fn &&fn) const {
        for (const auto &[number, page] : pages_)
            fn(number * kPageSize, std::span<const std::uint8_t>(*page));
    }

private:
    using Page = std::array<std::uint8_t, kPageSize>;

    void check_mapped(std::uint64_t addr, std::uint64_t len) const;
    void raw_read(std::uint64_t addr, std::span<std::uint8_t> out) const;
    void raw_write(std::uint64_t addr, std::span<const std::uint8_t> bytes);

    std::vector<Region> regions_;
    std::map<std::uint64_t, std::unique_ptr<Page>> pages_;
};

} // namespace ccfi::vm
