#include "ringlab/fft.hpp"

#include <numbers>

namespace ringlab {

namespace {

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

void require_pow2(int h, int w) {
    if (!is_pow2(h) || !is_pow2(w))
        throw std::invalid_argument("fft2: plane dimensions must be powers of two");
}

// In-place iterative radix-2 transform; sign = -1 forward, +1 inverse (no scaling).
void fft1(cplx* a, int n, int sign) {
    if (n == 1) return;
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        double ang = sign * 2.0 * std::numbers::pi / len;
        cplx wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                cplx u = a[i + k];
                cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

ComplexGrid transform2(const ComplexGrid& g, int sign) {
    require_pow2(g.height, g.width);
    ComplexGrid out = g;
    for (int i = 0; i < out.height; ++i) fft1(&out.data[static_cast<std::size_t>(i) * out.width], out.width, sign);
    std::vector<cplx> col(out.height);
    for (int j = 0; j < out.width; ++j) {
        for (int i = 0; i < out.height; ++i) col[i] = out.at(i, j);
        fft1(col.data(), out.height, sign);
        for (int i = 0; i < out.height; ++i) out.at(i, j) = col[i];
    }
    return out;
}

ComplexGrid shift2(const ComplexGrid& g, int row_shift, int col_shift) {
    ComplexGrid out(g.height, g.width);
    for (int i = 0; i < g.height; ++i) {
        int si = (i + row_shift) % g.height;
        for (int j = 0; j < g.width; ++j)
            out.at(i, j) = g.at(si, (j + col_shift) % g.width);
    }
    return out;
}

}  // namespace

ComplexGrid fft2(const ComplexGrid& g) { return transform2(g, -1); }

ComplexGrid fft2(const LatentGrid& g, int channel) {
    if (channel < 0 || channel >= g.channels)
        throw std::invalid_argument("fft2: channel out of range");
    ComplexGrid plane(g.height, g.width);
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j)
            plane.at(i, j) = cplx(g.at(channel, i, j), 0.0);
    return transform2(plane, -1);
}

ComplexGrid ifft2(const ComplexGrid& g) {
    ComplexGrid out = transform2(g, +1);
    double scale = 1.0 / (static_cast<double>(g.height) * g.width);
    for (cplx& v : out.data) v *= scale;
    return out;
}

ComplexGrid fftshift(const ComplexGrid& g) {
    // out[k] = in[(k + ceil(n/2)) % n] per axis, i.e. in[i] lands at (i + n/2) % n.
    return shift2(g, g.height - g.height / 2, g.width - g.width / 2);
}

ComplexGrid ifftshift(const ComplexGrid& g) {
    return shift2(g, g.height / 2, g.width / 2);
}

}  // namespace ringlab
