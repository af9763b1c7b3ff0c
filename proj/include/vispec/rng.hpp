#pragma once
#include <cstdint>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace vispec {

// Counter-based, splittable RNG. A stream is identified by a 64-bit key;
// draws are pure functions of (key, counter), so forked streams are
// independent of how many draws their siblings consumed.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(key) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derive a child stream; fork(a) != fork(b) for a != b.
    RngStream fork(std::uint64_t id) const {
        return RngStream(mix(key_ ^ mix(id ^ 0xd1b54a32d192ed03ULL)));
    }

    std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++)); }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_normal() {
        // Box-Muller; u1 kept away from 0.
        double u1 = next_uniform();
        double u2 = next_uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Inverse-CDF sample from an (approximately normalized) distribution.
    std::size_t sample_index(std::span<const double> probs) {
        if (probs.empty()) throw std::invalid_argument("sample_index: empty distribution");
        double u = next_uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        // Round-off spill: return the last index with positive mass.
        for (std::size_t i = probs.size(); i-- > 0;) {
            if (probs[i] > 0.0) return i;
        }
        return probs.size() - 1;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace vispec
