#pragma once

#include "ringlab/grid.hpp"

namespace ringlab {

/// Unnormalized forward 2D DFT, exp(-2*pi*i*...) convention.
/// Plane dimensions must be powers of two (radix-2 transform).
ComplexGrid fft2(const ComplexGrid& g);
ComplexGrid fft2(const LatentGrid& g, int channel);

/// Inverse 2D DFT with 1/(H*W) normalization; ifft2(fft2(x)) == x.
ComplexGrid ifft2(const ComplexGrid& g);

/// Circular shift moving DC (0,0) to (H/2, W/2).
ComplexGrid fftshift(const ComplexGrid& g);
/// Inverse of fftshift.
ComplexGrid ifftshift(const ComplexGrid& g);

}  // namespace ringlab
