#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace vitssp {

// Counter-based splittable RNG. Output i of stream (key) is a pure integer
// hash of (key, i), so identical (seed, draw sequence) gives identical bits on
// any platform, and substreams derived from a parent seed never collide with
// the parent. This is the only randomness source in the artifact.
class Rng {
  public:
    explicit Rng(uint64_t seed) : key_(mix(seed, 0x243F6A8885A308D3ull)), counter_(0) {}

    static uint64_t mix(uint64_t key, uint64_t ctr) {
        uint64_t z = key + (ctr + 1) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Deterministic child seed for substream `tag` of `seed`.
    static uint64_t derive(uint64_t seed, uint64_t tag) {
        return mix(seed ^ 0xD1B54A32D192ED03ull, tag);
    }

    uint64_t next_u64() { return mix(key_, counter_++); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    // Box-Muller, pair cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Resample until |x| <= bound_sigmas * sigma.
    double trunc_normal(double sigma, double bound_sigmas = 2.0) {
        double x;
        do {
            x = normal() * sigma;
        } while (std::fabs(x) > bound_sigmas * sigma);
        return x;
    }

    template <class It>
    void shuffle(It first, It last) {
        const int64_t n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) {
            std::swap(first[i], first[uniform_int(i + 1)]);
        }
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void set_state(uint64_t key, uint64_t counter) {
        key_ = key;
        counter_ = counter;
        has_cached_ = false;
    }

  private:
    uint64_t key_;
    uint64_t counter_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace vitssp
