#include "ccfi/rand_alloc.hpp"

#include <stdexcept>

#include "ccfi/memory.hpp"

namespace ccfi {

namespace {
constexpr std::uint64_t round_up(std::uint64_t n) {
    return (n + RandAllocator::kGranule - 1) & ~(RandAllocator::kGranule - 1);
}
} // namespace

RandAllocator::RandAllocator(std::uint64_t heap_base, std::uint64_t heap_size, Options options)
    : heap_base_(heap_base), heap_end_(heap_base + heap_size), cursor_(heap_base),
      options_(options) {}

std::uint64_t RandAllocator::allocate(std::uint64_t size, Prng &prng) {
    if (size == 0)
        throw std::invalid_argument("heap_alloc of zero bytes");
    const std::uint64_t pad = pad_bytes(prng, options_.entropy_bits);
    const std::uint64_t need = round_up(size) + pad;
    if (need < size)
        throw vm::MemoryFault(cursor_, "heap allocation too large");

    if (options_.reuse_freed) {
        for (auto it = free_.rbegin(); it != free_.rend(); ++it) {
            if (it->reserved >= need) {
                Chunk chunk = *it;
                free_.erase(std::next(it).base());
                live_[chunk.base + pad] = chunk;
                return chunk.base + pad;
            }
        }
    }
    if (need > heap_end_ - cursor_)
        throw vm::MemoryFault(cursor_, "heap exhausted");
    Chunk chunk{cursor_, need};
    cursor_ += need;
    live_[chunk.base + pad] = chunk;
    return chunk.base + pad;
}

void RandAllocator::release(std::uint64_t address) {
    auto it = live_.find(address);
    if (it == live_.end())
        throw vm::MemoryFault(address, "heap_free of an address that is not a live allocation");
    if (options_.reuse_freed)
        free_.push_back(it->second);
    live_.erase(it);
}

std::uint64_t RandAllocator::frame_pad(Prng &prng) const noexcept {
    return pad_bytes(prng, options_.entropy_bits);
}

} // namespace ccfi
