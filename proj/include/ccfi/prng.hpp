#pragma once

#include <array>
#include <cstdint>

namespace ccfi {

/// xoshiro256** seeded through splitmix64. Lives in the VM's reserved
/// register file, so its state is never visible in guest memory.
class Prng {
public:
    explicit Prng(std::uint64_t seed = 0) noexcept {
        std::uint64_t x = seed;
        for (auto &word : state_)
            word = splitmix64(x);
    }

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform integer in [0, 2^bits). Zero bits always yields 0 and does
    /// not advance the generator.
    std::uint64_t draw(unsigned bits) noexcept {
        if (bits == 0)
            return 0;
        if (bits >= 64)
            return next();
        return next() >> (64 - bits);
    }

    static std::uint64_t splitmix64(std::uint64_t &x) noexcept {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace ccfi
