#include "ringlab/grid.hpp"

#include <algorithm>

#include "ringlab/rng.hpp"

namespace ringlab {

std::size_t LatentGrid::checked_size(int c, int h, int w) {
    if (c < 1 || h < 1 || w < 1)
        throw std::invalid_argument("LatentGrid: dimensions must be positive");
    return static_cast<std::size_t>(c) * h * w;
}

std::size_t ComplexGrid::checked_size(int h, int w) {
    if (h < 1 || w < 1)
        throw std::invalid_argument("ComplexGrid: dimensions must be positive");
    return static_cast<std::size_t>(h) * w;
}

bool LatentGrid::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Norms norms(const LatentGrid& g) {
    Norms n;
    for (double v : g.data) {
        double a = std::fabs(v);
        n.l1 += a;
        n.l2sq += v * v;
        n.linf = std::max(n.linf, a);
    }
    return n;
}

Norms norms(const ComplexGrid& g) {
    Norms n;
    for (const cplx& v : g.data) {
        double a = std::abs(v);
        n.l1 += a;
        n.l2sq += std::norm(v);
        n.linf = std::max(n.linf, a);
    }
    return n;
}

void require_same_shape(const LatentGrid& a, const LatentGrid& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

LatentGrid operator+(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "operator+");
    LatentGrid out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

LatentGrid operator-(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "operator-");
    LatentGrid out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

LatentGrid operator*(double s, const LatentGrid& g) {
    LatentGrid out = g;
    for (double& v : out.data) v *= s;
    return out;
}

LatentGrid& operator+=(LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "operator+=");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
}

LatentGrid& operator-=(LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "operator-=");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] -= b.data[i];
    return a;
}

LatentGrid& operator*=(LatentGrid& a, double s) {
    for (double& v : a.data) v *= s;
    return a;
}

void axpy(LatentGrid& y, double a, const LatentGrid& x) {
    require_same_shape(y, x, "axpy");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

double dot(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "dot");
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double max_abs_diff(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

LatentGrid sample_gaussian(RngStream& rng, int channels, int height, int width) {
    LatentGrid g(channels, height, width);
    for (double& v : g.data) v = rng.normal();
    return g;
}

}  // namespace ringlab
