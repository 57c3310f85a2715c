// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cmath>

namespace echoloc {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive a child seed from a parent seed and a stream index. All randomness
/// in the pipeline flows through this so that results are reproducible for
/// any degree of parallelism.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream));
}

/// Counter-based generator: the state is (key, counter), each draw hashes
/// the pair. Independent streams come from independent keys.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t key) : key_(key) {}
    RandomStream(std::uint64_t seed, std::uint64_t stream)
        : key_(derive_seed(seed, stream)) {}

    std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace echoloc
