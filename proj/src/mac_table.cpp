#include "ccfi/mac_table.hpp"

#include <stdexcept>

namespace ccfi {

namespace {
bool is_power_of_two(std::uint64_t n) { return n != 0 && (n & (n - 1)) == 0; }
} // namespace

MacTableConfig MacTableConfig::parse(const std::string &text) {
    if (text == "exact")
        return exact();
    const std::string prefix = "direct:";
    if (text.rfind(prefix, 0) == 0) {
        std::uint64_t n = 0;
        try {
            std::size_t used = 0;
            n = std::stoull(text.substr(prefix.size()), &used, 0);
            if (used != text.size() - prefix.size())
                n = 0;
        } catch (const std::exception &) {
            n = 0;
        }
        if (!is_power_of_two(n))
            throw std::invalid_argument("direct-mapped table size must be a power of two: " + text);
        return direct(n);
    }
    throw std::invalid_argument("unknown MAC table mode '" + text + "' (want exact or direct:<2^k>)");
}

std::string MacTableConfig::to_string() const {
    return mode == Mode::ExactMap ? "exact" : "direct:" + std::to_string(size);
}

MacTable::MacTable(vm::Memory &memory, MacTableConfig config)
    : memory_(&memory), config_(config) {
    if (config_.mode == MacTableConfig::Mode::DirectMapped) {
        if (!is_power_of_two(config_.size))
            throw std::invalid_argument("direct-mapped table size must be a power of two");
        memory.map({"mac-table", vm::layout::kDirectTableBase, config_.size * kSlotBytes, true});
        owner_.assign(config_.size, 0);
    } else {
        memory.map({"mac-shadow", vm::layout::kShadowBase, vm::layout::kShadowSize, true});
    }
}

std::uint64_t MacTable::slot_address(std::uint64_t address) const noexcept {
    if (config_.mode == MacTableConfig::Mode::DirectMapped)
        return vm::layout::kDirectTableBase + slot_of(address, config_.size) * kSlotBytes;
    return vm::layout::kShadowBase + (address >> 3) * kSlotBytes;
}

void MacTable::store(std::uint64_t address, const MacValue &value) {
    memory_->write(slot_address(address), value.bytes);
    ++stats_.stores;
    if (config_.mode == MacTableConfig::Mode::DirectMapped) {
        auto &owner = owner_[slot_of(address, config_.size)];
        if (owner != 0 && owner != address)
            ++stats_.collisions;
        owner = address;
    }
}

std::optional<MacValue> MacTable::load(std::uint64_t address) {
    MacValue value;
    memory_->read(slot_address(address), value.bytes);
    if (value.is_zero()) {
        ++stats_.misses;
        return std::nullopt;
    }
    ++stats_.hits;
    return value;
}

} // namespace ccfi
