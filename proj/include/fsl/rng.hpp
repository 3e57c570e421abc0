#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fsl {

// Deterministic random source. All sampling goes through the explicit
// methods below instead of std:: distributions so that a seed produces the
// same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Derives an independent stream seed from a base seed and a stream id.
    // Used for per-task seeds so parallel evaluation order cannot matter.
    static uint64_t derive(uint64_t base, uint64_t stream);

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (two uniforms per draw, no caching).
    double normal();
    // Unbiased integer in [0, n). n must be positive.
    size_t index(size_t n);

    std::vector<size_t> permutation(size_t n);
    // First k entries of a random permutation of [0, n).
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

private:
    std::mt19937_64 engine_;
};

} // namespace fsl
