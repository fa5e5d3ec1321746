#pragma once

#include <cstdint>
#include <vector>

#include "ringlab/grid.hpp"

namespace ringlab {

class RngStream;

/// Circular frequency-domain mask in the fftshifted frame. `member` is the
/// geometric disk: distance from (i,j) to the plane center ((H-1)/2, (W-1)/2)
/// at most `radius`. `support` is the conjugate-closed subset of the disk
/// (positions whose Hermitian partner (H-i)%H, (W-j)%W is also a member);
/// keys carry values only there so that embedding a real latent stays
/// lossless under real-part truncation.
struct RingMask {
    int height = 0;
    int width = 0;
    int channel = 0;
    double radius = 0;
    std::vector<std::uint8_t> member;
    std::vector<int> support;
    int member_count = 0;

    double center_row() const { return (height - 1) / 2.0; }
    double center_col() const { return (width - 1) / 2.0; }
    double dist(int i, int j) const;
    int partner_row(int i) const { return (height - i) % height; }
    int partner_col(int j) const { return (width - j) % width; }
    /// Integer ring index floor(distance to center).
    int ring(int i, int j) const;
    /// Partner-invariant ring index floor(min(d, d_partner)).
    int orbit_ring(int i, int j) const;
};

RingMask make_ring_mask(int height, int width, double radius, int channel);

enum class KeyPattern {
    ring_constant,            // complex CN(0, HW) value per ring, lossy under real-part truncation
    hermitian_ring_constant,  // real N(0, HW) value per orbit ring, lossless
};

struct WatermarkKey {
    int height = 0;
    int width = 0;
    int channel = 0;
    double radius = 0;
    std::uint64_t seed = 0;
    KeyPattern pattern = KeyPattern::hermitian_ring_constant;
    std::vector<int> support;       // == mask.support
    std::vector<cplx> values;       // one per support entry
    std::vector<cplx> ring_values;  // rings 0..floor(radius); trailing rings may be unused
};

/// Draws one (a, b) normal pair per integer ring 0..floor(radius) from `rng`
/// regardless of pattern; ring value is (a+ib)*sqrt(HW/2) for ring_constant
/// and a*sqrt(HW) (real) for hermitian_ring_constant.
WatermarkKey make_ring_key(const RingMask& mask, RngStream& rng, KeyPattern pattern);

/// Overwrites the key support of fftshift(fft2(channel)) with the key values
/// and returns the latent with that channel replaced by the real part of the
/// inverse transform. Other channels and off-support spectrum untouched.
LatentGrid embed(const LatentGrid& x, const WatermarkKey& key, const RingMask& mask);

/// fftshift(fft2(channel)) sampled at the mask support, in support order.
std::vector<cplx> recover_key(const LatentGrid& x, const RingMask& mask);

struct ExtractionMetrics {
    double mean_l1 = 0;  // (1/n) sum |w_hat_i - w_i|
    double nmae = 0;     // ||w_hat - w||_1 / ||w||_1
    double nmse = 0;     // ||w_hat - w||_2^2 / ||w||_2^2
};

ExtractionMetrics extraction_metrics(const std::vector<cplx>& recovered,
                                     const std::vector<cplx>& key_values);
double mean_l1_distance(const std::vector<cplx>& recovered, const std::vector<cplx>& key_values);

/// Mask serialized as a 1-channel 0/1 grid of the geometric disk.
LatentGrid mask_to_grid(const RingMask& mask);
/// Key serialized as a complex plane, zeros off the support.
ComplexGrid key_to_grid(const WatermarkKey& key);

}  // namespace ringlab
