#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccfi/mac.hpp"
#include "ccfi/memory.hpp"

namespace ccfi {

/// Where MACs for protected pointers are kept.
///
/// ExactMap is a linear shadow: every 8-byte-aligned data address owns its
/// own 16-byte slot, so there are no collisions. DirectMapped hashes the
/// address into a power-of-two table and lets aliasing stores overwrite each
/// other. Both live in writable guest memory: the attacker can read and
/// corrupt them, and security rests only on the key.
struct MacTableConfig {
    enum class Mode { ExactMap, DirectMapped };
    Mode mode = Mode::ExactMap;
    std::uint64_t size = 0; // slots; DirectMapped only

    static MacTableConfig exact() { return {}; }
    static MacTableConfig direct(std::uint64_t slots) { return {Mode::DirectMapped, slots}; }

    /// Parses "exact" or "direct:<n>" where n is a power of two.
    static MacTableConfig parse(const std::string &text);
    std::string to_string() const;
};

struct MacTableStats {
    std::uint64_t stores = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t collisions = 0;
};

/// (address >> 3) mod size; `size` must be a power of two.
constexpr std::uint64_t slot_of(std::uint64_t address, std::uint64_t size) noexcept {
    return (address >> 3) & (size - 1);
}

class MacTable {
public:
    static constexpr std::uint64_t kSlotBytes = 16;

    /// Maps the table's region into `memory`.
    MacTable(vm::Memory &memory, MacTableConfig config);

    /// Guest address of the slot holding the MAC for `address`.
    std::uint64_t slot_address(std::uint64_t address) const noexcept;

    void store(std::uint64_t address, const MacValue &value);
    /// An all-zero slot reads as absent.
    std::optional<MacValue> load(std::uint64_t address);

    const MacTableConfig &config() const noexcept { return config_; }
    const MacTableStats &stats() const noexcept { return stats_; }

private:
    vm::Memory *memory_;
    MacTableConfig config_;
    MacTableStats stats_;
    // DirectMapped bookkeeping for the collision counter only; never
    // consulted when checking a MAC.
    std::vector<std::uint64_t> owner_;
};

} // namespace ccfi
