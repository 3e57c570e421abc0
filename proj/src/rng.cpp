#include "fsl/rng.hpp"

#include <cmath>
#include <numbers>

#include "fsl/errors.hpp"

namespace fsl {

namespace {
// splitmix64; scrambles correlated inputs into independent-looking seeds.
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace

uint64_t Rng::derive(uint64_t base, uint64_t stream) { return splitmix64(base ^ stream); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // u1 in (0, 1] keeps the log finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

size_t Rng::index(size_t n) {
    if (n == 0) raise(ErrorCode::invalid_argument, "Rng::index: n must be positive");
    uint64_t limit = (UINT64_MAX / n) * n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<size_t>(x % n);
}

std::vector<size_t> Rng::permutation(size_t n) {
    std::vector<size_t> p(n);
    for (size_t i = 0; i < n; ++i) p[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
    return p;
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
    if (k > n)
        raise(ErrorCode::sampling,
              "sample_without_replacement: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
    std::vector<size_t> p(n);
    for (size_t i = 0; i < n; ++i) p[i] = i;
    for (size_t i = 0; i < k; ++i) std::swap(p[i], p[i + index(n - i)]);
    p.resize(k);
    return p;
}

} // namespace fsl
