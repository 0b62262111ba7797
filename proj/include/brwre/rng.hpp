#pragma once

#include <cmath>
#include <cstdint>

namespace brwre {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// A block is addressed by (key = seed, counter = {stream, index}); outputs
// are independent across addresses, so streams never need to be skipped
// ahead and environments can be extended site by site without reshuffling.
struct Philox4x32 {
    struct Block {
        uint32_t v[4];
    };

    static constexpr uint32_t M0 = 0xD2511F53u;
    static constexpr uint32_t M1 = 0xCD9E8D57u;
    static constexpr uint32_t W0 = 0x9E3779B9u;
    static constexpr uint32_t W1 = 0xBB67AE85u;

    static Block run(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo) {
        uint32_t c0 = static_cast<uint32_t>(ctr_lo);
        uint32_t c1 = static_cast<uint32_t>(ctr_lo >> 32);
        uint32_t c2 = static_cast<uint32_t>(ctr_hi);
        uint32_t c3 = static_cast<uint32_t>(ctr_hi >> 32);
        uint32_t k0 = static_cast<uint32_t>(key);
        uint32_t k1 = static_cast<uint32_t>(key >> 32);
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = static_cast<uint64_t>(M0) * c0;
            const uint64_t p1 = static_cast<uint64_t>(M1) * c2;
            const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
            const uint32_t lo0 = static_cast<uint32_t>(p0);
            const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
            const uint32_t lo1 = static_cast<uint32_t>(p1);
            const uint32_t n0 = hi1 ^ c1 ^ k0;
            const uint32_t n2 = hi0 ^ c3 ^ k1;
            c0 = n0;
            c1 = lo1;
            c2 = n2;
            c3 = lo0;
            k0 += W0;
            k1 += W1;
        }
        return Block{{c0, c1, c2, c3}};
    }
};

// 64-bit mixer used to derive stream ids from structured inputs.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t derive_stream(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    return mix64(a ^ mix64(b ^ mix64(c)));
}

// Counter-mode RNG over a fixed (seed, stream) pair. Successive outputs walk
// the 64-bit block index; one Philox block yields two 64-bit words.
class Rng {
public:
    Rng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    uint64_t next_u64() {
        if (have_ == 0) {
            const Philox4x32::Block b = Philox4x32::run(seed_, stream_, index_++);
            buf_[0] = (static_cast<uint64_t>(b.v[1]) << 32) | b.v[0];
            buf_[1] = (static_cast<uint64_t>(b.v[3]) << 32) | b.v[2];
            have_ = 2;
        }
        return buf_[--have_];
    }

    // uniform on [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on (0,1); safe to feed into log()
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
    }

    double exponential(double rate) { return -std::log(uniform_open()) / rate; }

    // standard normal, Marsaglia polar with one cached mate
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * f;
        has_cached_ = true;
        return u * f;
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t index_ = 0;
    uint64_t buf_[2] = {0, 0};
    int have_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Single uniform draw keyed by (seed, site). Used for i.i.d. environment
// generation; window growth in either direction leaves existing sites fixed.
inline double site_uniform(uint64_t seed, int64_t site) {
    const Philox4x32::Block b =
        Philox4x32::run(seed, static_cast<uint64_t>(site), 0);
    const uint64_t w = (static_cast<uint64_t>(b.v[1]) << 32) | b.v[0];
    return static_cast<double>(w >> 11) * 0x1.0p-53;
}

}  // namespace brwre
