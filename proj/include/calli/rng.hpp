#pragma once

#include <cstdint>
#include <vector>

namespace calli {

// xoshiro256++ seeded through splitmix64. Self-contained so that seeded runs
// reproduce bit-for-bit; std::normal_distribution makes no such promise.
class Rng {
public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed);

    std::uint64_t next_u64();

    // uniform in [0, 1)
    double uniform();

    // uniform integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // standard normal via Box-Muller; generates pairs, caches the spare
    double gaussian();

    void fill_gaussian(double* out, std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream derived from this seed and an index; used for
    // per-item parallel work that must not depend on iteration order.
    static Rng derive(std::uint64_t seed, std::uint64_t index);

private:
    std::uint64_t s_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace calli
