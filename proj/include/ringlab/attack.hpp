#pragma once

#include <cstdint>
#include <string>

#include "ringlab/grid.hpp"

namespace ringlab {

enum class AttackKind { none, gaussian_blur, additive_noise };

const char* to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

/// Post-generation distortion. `sigma` is the blur kernel width or the noise
/// standard deviation depending on `kind`; noise is drawn from
/// RngStream(seed, stream).
struct AttackSpec {
    AttackKind kind = AttackKind::none;
    double sigma = 0;
    int kernel_radius = 2;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    static AttackSpec none() { return {}; }
    static AttackSpec blur(double sigma = 1.0, int radius = 2) {
        return {AttackKind::gaussian_blur, sigma, radius, 0, 0};
    }
    static AttackSpec noise(double sigma = 0.1, std::uint64_t seed = 0, std::uint64_t stream = 0) {
        return {AttackKind::additive_noise, sigma, 0, seed, stream};
    }
};

/// Blur is separable per channel with reflect-101 edge handling (the border
/// sample is not repeated); noise adds sigma * N(0,1) per entry.
LatentGrid apply_attack(const LatentGrid& x, const AttackSpec& spec);

}  // namespace ringlab
