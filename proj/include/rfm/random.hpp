#pragma once

// Deterministic random streams.
//
// Every run owns a 64-bit seed. Independent concerns (parameter init, training
// pairs, training times, evaluation draws) pull from separate Mersenne Twister
// engines seeded from (run_seed, stream), so that changing how one stream is
// consumed never perturbs another. Two runs that differ only in their loss see
// exactly the same data.

#include <cstdint>
#include <random>

namespace rfm {

using Rng = std::mt19937_64;

enum class Stream : std::uint32_t {
    init = 1,
    data = 2,
    time = 3,
    eval_source = 4,
    eval_target = 5,
    figure = 6,
};

inline Rng make_stream(std::uint64_t run_seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(run_seed & 0xffffffffu),
                      static_cast<std::uint32_t>(run_seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x52464d21u};
    return Rng{seq};
}

// FNV-1a over raw bytes; used to fingerprint the data stream a run consumed.
class StreamDigest {
public:
    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ull;
        }
    }

    std::uint64_t value() const { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

} // namespace rfm
