#include "ccfi/memory.hpp"

#include <algorithm>
#include <cstdio>

namespace ccfi::vm {

namespace {
std::string describe(std::uint64_t address, const std::string &what) {
    char buf[32];
    std::snprintf(buf, sizeof buf, " at 0x%llx", static_cast<unsigned long long>(address));
    return what + buf;
}
} // namespace

MemoryFault::MemoryFault(std::uint64_t address, const std::string &what)
    : std::runtime_error(describe(address, what)), address_(address) {}

void Memory::map(Region region) {
    for (const auto &r : regions_) {
        const bool disjoint = region.base + region.size <= r.base || r.base + r.size <= region.base;
        if (!disjoint)
            throw std::logic_error("region " + region.name + " overlaps " + r.name);
    }
    regions_.push_back(std::move(region));
}

const Region *Memory::region_of(std::uint64_t addr) const noexcept {
    for (const auto &r : regions_)
        if (r.contains(addr))
            return &r;
    return nullptr;
}

bool Memory::is_mapped(std::uint64_t addr, std::uint64_t len) const noexcept {
    if (len == 0)
        return true;
    if (addr + len < addr)
        return false;
    std::uint64_t cur = addr;
    const std::uint64_t end = addr + len;
    while (cur < end) {
        const Region *r = region_of(cur);
        if (!r)
            return false;
        cur = r->base + r->size;
    }
    return true;
}

bool Memory::overlaps_readonly(std::uint64_t addr, std::uint64_t len) const noexcept {
    for (const auto &r : regions_) {
        if (r.writable)
            continue;
        if (addr < r.base + r.size && r.base < addr + len)
            return true;
    }
    return false;
}

void Memory::check_mapped(std::uint64_t addr, std::uint64_t len) const {
    if (!is_mapped(addr, len))
        throw MemoryFault(addr, "access to unmapped memory");
}

void Memory::read(std::uint64_t addr, std::span<std::uint8_t> out) const {
    check_mapped(addr, out.size());
    raw_read(addr, out);
}

void Memory::write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    check_mapped(addr, bytes.size());
    if (overlaps_readonly(addr, bytes.size()))
        throw MemoryFault(addr, "write to read-only memory");
    raw_write(addr, bytes);
}

std::uint64_t Memory::read_u64(std::uint64_t addr) const {
    std::array<std::uint8_t, 8> buf{};
    read(addr, buf);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | buf[i];
    return v;
}

void Memory::write_u64(std::uint64_t addr, std::uint64_t value) {
    std::array<std::uint8_t, 8> buf{};
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<std::uint8_t>(value >> (8 * i));
    write(addr, buf);
}

void Memory::poke(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    check_mapped(addr, bytes.size());
    raw_write(addr, bytes);
}

void Memory::poke_u64(std::uint64_t addr, std::uint64_t value) {
    std::array<std::uint8_t, 8> buf{};
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<std::uint8_t>(value >> (8 * i));
    poke(addr, buf);
}

void Memory::raw_read(std::uint64_t addr, std::span<std::uint8_t> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
        const std::uint64_t a = addr + done;
        const std::uint64_t offset = a % kPageSize;
        const std::size_t chunk = std::min<std::size_t>(out.size() - done, kPageSize - offset);
        auto it = pages_.find(a / kPageSize);
        if (it == pages_.end())
            std::fill_n(out.begin() + done, chunk, 0);
        else
            std::copy_n(it->second->begin() + offset, chunk, out.begin() + done);
        done += chunk;
    }
}

void Memory::raw_write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
        const std::uint64_t a = addr + done;
        const std::uint64_t offset = a % kPageSize;
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, kPageSize - offset);
        auto &page = pages_[a / kPageSize];
        if (!page)
            page = std::make_unique<Page>(Page{});
        std::copy_n(bytes.begin() + done, chunk, page->begin() + offset);
        done += chunk;
    }
}

std::size_t Memory::count_occurrences(std::span<const std::uint8_t> pattern) const {
    if (pattern.empty())
        return 0;
    std::size_t count = 0;
    // Runs of consecutive pages are searched as one buffer.
    std::vector<std::uint8_t> run;
    std::uint64_t next_page = ~std::uint64_t{0};
    auto flush = [&] {
        auto it = run.begin();
        while (true) {
            it = std::search(it, run.end(), pattern.begin(), pattern.end());
            if (it == run.end())
                break;
            ++count;
            ++it;
        }
        run.clear();
    };
    for (const auto &[number, page] : pages_) {
        if (number != next_page)
            flush();
        run.insert(run.end(), page->begin(), page->end());
        next_page = number + 1;
    }
    flush();
    return count;
}

} // namespace ccfi::vm
