#include "ringlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ringlab {

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kStreamSalt = 0xA0761D6478BD642Full;

std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_(stream_id), state_(mix(seed + kGamma) ^ mix(stream_id ^ kStreamSalt)) {}

std::uint64_t RngStream::next_u64() {
    state_ += kGamma;
    return mix(state_);
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be >= 1");
    // Rejection sampling on the top range multiple of n: unbiased, deterministic.
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
        std::uint64_t v = next_u64();
        if (v < limit) return v % n;
    }
}

}  // namespace ringlab
