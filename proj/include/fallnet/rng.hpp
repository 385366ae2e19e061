#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fallnet {

// Deterministic random source. std::mt19937_64 output is fully specified by
// the C++ standard, so equal seeds give bit-identical streams on every
// platform; the uniform/normal mappings below are our own so no
// implementation-defined distribution code sneaks in.
//
// split(tag) derives an independent child stream whose seed depends only on
// the parent seed and the tag, never on how much of the parent stream has
// been consumed. Named substreams keep concerns isolated: e.g. consuming
// more draws while shuffling can never perturb weight initialization.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed);

    uint64_t seed() const { return seed_; }

    SeededRng split(std::string_view tag) const;
    SeededRng split(uint64_t index) const;

    uint64_t next_u64();

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform();
    // Uniform on [lo, hi); requires lo < hi.
    double uniform(double lo, double hi);
    // Box-Muller; consumes engine draws in pairs via an internal spare.
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform integer on [0, n); requires n > 0. Rejection sampling, unbiased.
    uint64_t below(uint64_t n);

    // Fisher-Yates, identical element order for identical seeds.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fallnet
