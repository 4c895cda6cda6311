#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace nadjust {

/// Deterministic counter-style RNG with named sub-streams.
///
/// Every random decision in a run is drawn from a stream derived from the
/// run seed via child() calls (e.g. seed -> "probe" -> iteration -> layer ->
/// sample), so components can be re-run in isolation with matching numbers
/// and per-layer work can be scheduled in any order or in parallel without
/// changing results.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : state_(mix(seed ^ kRootSalt)) {}

    RngStream child(std::string_view name) const {
        return RngStream(mix(state_ ^ fnv1a(name)), Tag{});
    }

    RngStream child(uint64_t index) const {
        return RngStream(mix(state_ ^ mix(index ^ kIndexSalt)), Tag{});
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; always consumes two uniforms.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform integer in [0, bound). bound must be > 0.
    uint64_t next_below(uint64_t bound) { return next_u64() % bound; }

private:
    struct Tag {};
    RngStream(uint64_t raw_state, Tag) : state_(raw_state) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDull;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ull;
        return z ^ (z >> 33);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xCBF29CE484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        return h;
    }

    static constexpr uint64_t kRootSalt = 0xA076'1D64'78BD'642Full;
    static constexpr uint64_t kIndexSalt = 0xE703'7ED1'A0B4'28DBull;

    uint64_t state_;
};

}  // namespace nadjust
