#include "ringlab/attack.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ringlab/rng.hpp"

namespace ringlab {

const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::gaussian_blur: return "gaussian_blur";
        case AttackKind::additive_noise: return "additive_noise";
    }
    return "unknown";
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none") return AttackKind::none;
    if (s == "gaussian_blur") return AttackKind::gaussian_blur;
    if (s == "additive_noise") return AttackKind::additive_noise;
    throw std::invalid_argument("unknown attack kind: " + s);
}

namespace {

int reflect_index(int p, int n) {
    if (n == 1) return 0;
    while (p < 0 || p >= n) p = p < 0 ? -p : 2 * (n - 1) - p;
    return p;
}

std::vector<double> blur_kernel(double sigma, int radius) {
    std::vector<double> k(2 * radius + 1);
    double z = 0;
    for (int d = -radius; d <= radius; ++d) {
        k[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
        z += k[d + radius];
    }
    for (double& v : k) v /= z;
    return k;
}

}  // namespace

LatentGrid apply_attack(const LatentGrid& x, const AttackSpec& spec) {
    switch (spec.kind) {
        case AttackKind::none:
            return x;
        case AttackKind::gaussian_blur: {
            if (!(spec.sigma > 0))
                throw std::invalid_argument("gaussian_blur: sigma must be positive");
            if (spec.kernel_radius < 0)
                throw std::invalid_argument("gaussian_blur: negative kernel radius");
            int r = spec.kernel_radius;
            std::vector<double> k = blur_kernel(spec.sigma, r);
            LatentGrid rows(x.channels, x.height, x.width);
            for (int c = 0; c < x.channels; ++c)
                for (int i = 0; i < x.height; ++i)
                    for (int j = 0; j < x.width; ++j) {
                        double acc = 0;
                        for (int d = -r; d <= r; ++d)
                            acc += k[d + r] * x.at(c, i, reflect_index(j + d, x.width));
                        rows.at(c, i, j) = acc;
                    }
            LatentGrid out(x.channels, x.height, x.width);
            for (int c = 0; c < x.channels; ++c)
                for (int i = 0; i < x.height; ++i)
                    for (int j = 0; j < x.width; ++j) {
                        double acc = 0;
                        for (int d = -r; d <= r; ++d)
                            acc += k[d + r] * rows.at(c, reflect_index(i + d, x.height), j);
                        out.at(c, i, j) = acc;
                    }
            return out;
        }
        case AttackKind::additive_noise: {
            if (spec.sigma < 0)
                throw std::invalid_argument("additive_noise: sigma must be non-negative");
            RngStream rng(spec.seed, spec.stream);
            LatentGrid out = x;
            for (double& v : out.data) v += spec.sigma * rng.normal();
            return out;
        }
    }
    throw std::invalid_argument("apply_attack: unknown attack kind");
}

}  // namespace ringlab
