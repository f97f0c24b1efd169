#pragma once

#include <cstdint>
#include <limits>
#include <span>

namespace bpeimg {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Counter-based stream: output n of stream s under seed k is a pure function
// of (k, s, n), so streams can be generated in any order or concurrently.
class CounterRng {
public:
    using result_type = std::uint64_t;

    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_(splitmix64(seed ^ splitmix64(stream ^ 0xD1B54A32D192ED03ull))) {}

    // Child stream keyed off this one; used for nested (grid, column) streams.
    constexpr CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(key_, stream); }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * counter_++); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    // Index drawn from a probability vector; the last index absorbs rounding.
    std::size_t categorical(std::span<const double> probs) noexcept {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.size() - 1;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace bpeimg
