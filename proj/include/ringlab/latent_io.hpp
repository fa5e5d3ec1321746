#pragma once

#include <string>

#include "ringlab/grid.hpp"

namespace ringlab {

/// Binary latent file, magic "RLT1": 3 little-endian uint32 (C, H, W)
/// followed by C*H*W little-endian float64 in row-major (c, i, j) order.
void write_latent(const std::string& path, const LatentGrid& g);
LatentGrid read_latent(const std::string& path);

/// Complex plane file, magic "RLC1": uint32 (C=1, H, W), then the real plane
/// and the imaginary plane as two consecutive float64 blocks.
void write_complex(const std::string& path, const ComplexGrid& g);
ComplexGrid read_complex(const std::string& path);

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ringlab
