#include "fallnet/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fallnet {

namespace {

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

SeededRng::SeededRng(uint64_t seed) : seed_(seed), engine_(seed) {}

SeededRng SeededRng::split(std::string_view tag) const {
    return SeededRng(splitmix64(seed_ ^ fnv1a64(tag)));
}

SeededRng SeededRng::split(uint64_t index) const {
    return SeededRng(splitmix64(splitmix64(seed_) + index));
}

uint64_t SeededRng::next_u64() {
    return engine_();
}

double SeededRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    if (!(lo < hi)) {
        throw std::invalid_argument("SeededRng::uniform: lo must be < hi");
    }
    return lo + (hi - lo) * uniform();
}

double SeededRng::normal(double mean, double stddev) {
    if (have_spare_) {
        have_spare_ = false;
        return mean + stddev * spare_;
    }
    // u1 in (0, 1] so std::log never sees zero.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
}

uint64_t SeededRng::below(uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("SeededRng::below: n must be > 0");
    }
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % n;
}

} // namespace fallnet
