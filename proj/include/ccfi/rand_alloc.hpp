#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "ccfi/prng.hpp"

namespace ccfi {

/// Heap allocator that offsets every chunk by a random number of 8-byte
/// granules, plus the matching stack-frame pad source. Randomness comes from
/// the caller's PRNG (the VM passes its reserved-register generator).
class RandAllocator {
public:
    static constexpr std::uint64_t kGranule = 8;

    struct Options {
        unsigned entropy_bits = 0;
        bool reuse_freed = false;
    };

    RandAllocator(std::uint64_t heap_base, std::uint64_t heap_size, Options options);

    /// Returns base + pad. Throws vm::MemoryFault when the heap is exhausted
    /// and std::invalid_argument for a zero size.
    std::uint64_t allocate(std::uint64_t size, Prng &prng);
    /// Throws vm::MemoryFault on an address that is not a live allocation.
    void release(std::uint64_t address);

    /// Pad for one stack frame: draw(entropy_bits) granules.
    std::uint64_t frame_pad(Prng &prng) const noexcept;
    /// Pad in bytes for an explicit entropy, used by instrumented prologues.
    static std::uint64_t pad_bytes(Prng &prng, unsigned entropy_bits) noexcept {
        return prng.draw(entropy_bits) * kGranule;
    }

    const Options &options() const noexcept { return options_; }
    std::size_t live_allocations() const noexcept { return live_.size(); }

private:
    struct Chunk {
        std::uint64_t base = 0;
        std::uint64_t reserved = 0;
    };

    std::uint64_t heap_base_;
    std::uint64_t heap_end_;
    std::uint64_t cursor_;
    Options options_;
    std::map<std::uint64_t, Chunk> live_;
    // LIFO free list, consulted only with reuse_freed.
    std::vector<Chunk> free_;
};

} // namespace ccfi
