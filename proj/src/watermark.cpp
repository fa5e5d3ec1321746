#include "ringlab/watermark.hpp"

#include <algorithm>
#include <cmath>

#include "ringlab/fft.hpp"
#include "ringlab/rng.hpp"

namespace ringlab {

double RingMask::dist(int i, int j) const {
    double di = i - center_row();
    double dj = j - center_col();
    return std::sqrt(di * di + dj * dj);
}

int RingMask::ring(int i, int j) const { return static_cast<int>(std::floor(dist(i, j))); }

int RingMask::orbit_ring(int i, int j) const {
    double d = dist(i, j);
    double dp = dist(partner_row(i), partner_col(j));
    return static_cast<int>(std::floor(std::min(d, dp)));
}

RingMask make_ring_mask(int height, int width, double radius, int channel) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("make_ring_mask: dimensions must be positive");
    if (channel < 0)
        throw std::invalid_argument("make_ring_mask: channel must be non-negative");
    if (radius < 0)
        throw std::invalid_argument("make_ring_mask: radius must be non-negative");
    if (radius >= std::min(height, width) / 2.0)
        throw std::invalid_argument("make_ring_mask: radius must be below half the smaller dimension");

    RingMask m;
    m.height = height;
    m.width = width;
    m.channel = channel;
    m.radius = radius;
    m.member.assign(static_cast<std::size_t>(height) * width, 0);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j)
            if (m.dist(i, j) <= radius) {
                m.member[static_cast<std::size_t>(i) * width + j] = 1;
                ++m.member_count;
            }
    if (m.member_count == 0)
        throw std::invalid_argument("make_ring_mask: mask has no members at this radius");

    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
            std::size_t idx = static_cast<std::size_t>(i) * width + j;
            std::size_t pidx = static_cast<std::size_t>(m.partner_row(i)) * width + m.partner_col(j);
            if (m.member[idx] && m.member[pidx]) m.support.push_back(static_cast<int>(idx));
        }
    return m;
}

WatermarkKey make_ring_key(const RingMask& mask, RngStream& rng, KeyPattern pattern) {
    WatermarkKey key;
    key.height = mask.height;
    key.width = mask.width;
    key.channel = mask.channel;
    key.radius = mask.radius;
    key.seed = rng.seed();
    key.pattern = pattern;
    key.support = mask.support;

    double hw = static_cast<double>(mask.height) * mask.width;
    int max_ring = static_cast<int>(std::floor(mask.radius));
    key.ring_values.reserve(max_ring + 1);
    for (int r = 0; r <= max_ring; ++r) {
        double a = rng.normal();
        double b = rng.normal();
        if (pattern == KeyPattern::ring_constant)
            key.ring_values.emplace_back(a * std::sqrt(hw / 2.0), b * std::sqrt(hw / 2.0));
        else
            key.ring_values.emplace_back(a * std::sqrt(hw), 0.0);
    }

    key.values.reserve(key.support.size());
    for (int idx : key.support) {
        int i = idx / mask.width;
        int j = idx % mask.width;
        int r = pattern == KeyPattern::ring_constant ? mask.ring(i, j) : mask.orbit_ring(i, j);
        key.values.push_back(key.ring_values[static_cast<std::size_t>(r)]);
    }
    return key;
}

namespace {

void check_compatible(const LatentGrid& x, int channel, int height, int width, const char* what) {
    if (x.height != height || x.width != width)
        throw std::invalid_argument(std::string(what) + ": latent plane size does not match mask");
    if (channel < 0 || channel >= x.channels)
        throw std::invalid_argument(std::string(what) + ": watermark channel out of range");
}

}  // namespace

LatentGrid embed(const LatentGrid& x, const WatermarkKey& key, const RingMask& mask) {
    if (key.height != mask.height || key.width != mask.width || key.channel != mask.channel ||
        key.support != mask.support)
        throw std::invalid_argument("embed: key does not belong to this mask");
    check_compatible(x, key.channel, key.height, key.width, "embed");

    ComplexGrid spec = fftshift(fft2(x, key.channel));
    for (std::size_t k = 0; k < key.support.size(); ++k)
        spec.data[static_cast<std::size_t>(key.support[k])] = key.values[k];
    ComplexGrid plane = ifft2(ifftshift(spec));

    LatentGrid out = x;
    for (int i = 0; i < out.height; ++i)
        for (int j = 0; j < out.width; ++j)
            out.at(key.channel, i, j) = plane.at(i, j).real();
    if (!out.all_finite()) throw numerical_error("embed: non-finite output");
    return out;
}

std::vector<cplx> recover_key(const LatentGrid& x, const RingMask& mask) {
    check_compatible(x, mask.channel, mask.height, mask.width, "recover_key");
    ComplexGrid spec = fftshift(fft2(x, mask.channel));
    std::vector<cplx> out;
    out.reserve(mask.support.size());
    for (int idx : mask.support) out.push_back(spec.data[static_cast<std::size_t>(idx)]);
    return out;
}

double mean_l1_distance(const std::vector<cplx>& recovered, const std::vector<cplx>& key_values) {
    if (recovered.size() != key_values.size() || recovered.empty())
        throw std::invalid_argument("mean_l1_distance: supports differ or are empty");
    double s = 0;
    for (std::size_t i = 0; i < recovered.size(); ++i) s += std::abs(recovered[i] - key_values[i]);
    return s / static_cast<double>(recovered.size());
}

ExtractionMetrics extraction_metrics(const std::vector<cplx>& recovered,
                                     const std::vector<cplx>& key_values) {
    if (recovered.size() != key_values.size() || recovered.empty())
        throw std::invalid_argument("extraction_metrics: supports differ or are empty");
    double abs_err = 0, sq_err = 0, abs_key = 0, sq_key = 0;
    for (std::size_t i = 0; i < recovered.size(); ++i) {
        abs_err += std::abs(recovered[i] - key_values[i]);
        sq_err += std::norm(recovered[i] - key_values[i]);
        abs_key += std::abs(key_values[i]);
        sq_key += std::norm(key_values[i]);
    }
    if (abs_key == 0 || sq_key == 0)
        throw std::domain_error("extraction_metrics: key has zero norm, nmae/nmse undefined");
    ExtractionMetrics m;
    m.mean_l1 = abs_err / static_cast<double>(recovered.size());
    m.nmae = abs_err / abs_key;
    m.nmse = sq_err / sq_key;
    return m;
}

LatentGrid mask_to_grid(const RingMask& mask) {
    LatentGrid g(1, mask.height, mask.width);
    for (std::size_t i = 0; i < mask.member.size(); ++i) g.data[i] = mask.member[i] ? 1.0 : 0.0;
    return g;
}

ComplexGrid key_to_grid(const WatermarkKey& key) {
    ComplexGrid g(key.height, key.width);
    for (std::size_t k = 0; k < key.support.size(); ++k)
        g.data[static_cast<std::size_t>(key.support[k])] = key.values[k];
    return g;
}

}  // namespace ringlab
