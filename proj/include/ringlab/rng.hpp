#pragma once

#include <cstdint>

namespace ringlab {

/// Deterministic counter-style random stream (frozen algorithm, do not change):
///
///   state0  = mix(seed + GAMMA) ^ mix(stream_id ^ STREAM_SALT)
///   next()  : state += GAMMA; return mix(state)
///
/// where GAMMA = 0x9E3779B97F4A7C15, STREAM_SALT = 0xA0761D6478BD642F and
/// mix() is the SplitMix64 finalizer. The uint64 sequence for a given
/// (seed, stream_id) is identical on every platform; test vectors are frozen
/// in tests. uniform01() takes the top 53 bits, normal() is Box-Muller
/// (cosine branch) and consumes exactly two uniforms per call. The normal
/// path calls libm log/cos, bit-stable for a fixed C library and pinned at
/// 1e-15 in tests rather than bit-exactly.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform01();
    /// Standard normal draw.
    double normal();
    /// Uniform integer in [0, n), rejection-sampled (n >= 1).
    std::uint64_t next_below(std::uint64_t n);

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t state_;
};

}  // namespace ringlab
