#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ringlab {

using cplx = std::complex<double>;

/// Thrown when a solver or transform produces non-finite values or fails to
/// converge where convergence is required.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Real-valued C x H x W tensor, row-major by (channel, row, column).
struct LatentGrid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    LatentGrid() = default;
    LatentGrid(int c, int h, int w) : channels(c), height(h), width(w), data(checked_size(c, h, w), 0.0) {}

    double& at(int c, int i, int j) {
        return data[(static_cast<std::size_t>(c) * height + i) * width + j];
    }
    double at(int c, int i, int j) const {
        return data[(static_cast<std::size_t>(c) * height + i) * width + j];
    }

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const LatentGrid& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool all_finite() const;

  private:
    static std::size_t checked_size(int c, int h, int w);
};

/// Complex H x W plane (one spectral channel), row-major.
struct ComplexGrid {
    int height = 0;
    int width = 0;
    std::vector<cplx> data;

    ComplexGrid() = default;
    ComplexGrid(int h, int w) : height(h), width(w), data(checked_size(h, w)) {}

    cplx& at(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
    cplx at(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const ComplexGrid& o) const { return height == o.height && width == o.width; }

  private:
    static std::size_t checked_size(int h, int w);
};

struct Norms {
    double l1 = 0;
    double l2sq = 0;
    double linf = 0;
};

Norms norms(const LatentGrid& g);
Norms norms(const ComplexGrid& g);

void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what);

LatentGrid operator+(const LatentGrid& a, const LatentGrid& b);
LatentGrid operator-(const LatentGrid& a, const LatentGrid& b);
LatentGrid operator*(double s, const LatentGrid& g);
LatentGrid& operator+=(LatentGrid& a, const LatentGrid& b);
LatentGrid& operator-=(LatentGrid& a, const LatentGrid& b);
LatentGrid& operator*=(LatentGrid& a, double s);

/// y += a*x
void axpy(LatentGrid& y, double a, const LatentGrid& x);
double dot(const LatentGrid& a, const LatentGrid& b);
double max_abs_diff(const LatentGrid& a, const LatentGrid& b);

class RngStream;
/// Fresh standard-normal grid from the stream; consumes 2*C*H*W uniforms.
LatentGrid sample_gaussian(RngStream& rng, int channels, int height, int width);

}  // namespace ringlab
