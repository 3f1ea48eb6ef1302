#pragma once

#include <cmath>
#include <cstdint>

namespace bms {

// Deterministic random stream: PCG-XSH-RR 64/32 (O'Neill's pcg32) with the
// reference multiplier 6364136223846793005 and a per-stream odd increment
// derived from the stream id. The same (seed, stream, draw index) triple
// yields the same bits on every platform; uniform doubles take the top 53
// bits of two consecutive 32-bit outputs. Normal variates come from the
// Box-Muller transform applied to the uniform stream, with the second
// variate of each pair cached.
class RngStream {
  public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id) {
        inc_ = (stream_id << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    // Independent derived stream; stable under reordering of calls.
    RngStream substream(std::uint64_t index) const {
        // splitmix-style mix keeps distinct (stream, index) pairs apart
        std::uint64_t x = stream_id_ + 0x9e3779b97f4a7c15ull * (index + 1u);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return RngStream(seed_, x);
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ull + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    std::uint64_t next_u64() {
        std::uint64_t hi = next_u32();
        std::uint64_t lo = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller on consecutive uniforms.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
    // the dataset sizes here, but use Lemire-style rejection anyway.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t threshold = (0u - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace bms
