#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace xcnn {

/// SplitMix64 stream. Streams are split by hashing a parent seed together
/// with integer keys, e.g. Rng::derive(run_seed, {epoch, sample, layer}),
/// so every draw is addressable and independent of evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = mix(seed + 0x9e3779b97f4a7c15ULL);
        for (std::uint64_t k : keys) h = mix(h ^ mix(k + 0x9e3779b97f4a7c15ULL));
        return h;
    }

    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        return Rng(derive_seed(seed, keys));
    }

    // FNV-1a; turns a stream name into a key.
    static constexpr std::uint64_t tag(std::string_view name) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char ch : name) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= limit) return r % bound;
        }
    }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

template <typename Container>
void shuffle(Container& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

} // namespace xcnn
