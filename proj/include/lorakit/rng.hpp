#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace lorakit {

// Deterministic random stream. All randomness in the toolkit flows through
// this class so that a run is reproducible from its seed alone: mt19937_64
// has a standard-defined output sequence, and the derived draws below use
// fixed algorithms instead of implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform double in [0, 1) built from the top 53 bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller, one spare cached.
    double gaussian();

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(items[i], items[j]);
        }
    }

    // Derive a child seed from a parent seed and a path of indices
    // (epoch, step, ...). SplitMix64-style mixing keeps streams decorrelated.
    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lorakit
