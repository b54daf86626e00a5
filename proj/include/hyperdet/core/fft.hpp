#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "hyperdet/core/error.hpp"

namespace hyperdet {

using cplx = std::complex<double>;

namespace detail_fft {

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// in-place iterative radix-2 Cooley-Tukey
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / double(len);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= double(n);
}

}  // namespace detail_fft

// DFT of arbitrary length; radix-2 directly, Bluestein otherwise.
inline void fft(std::vector<cplx>& a, bool inverse = false) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    if (detail_fft::is_pow2(n)) {
        detail_fft::fft_pow2(a, inverse);
        return;
    }
    // Bluestein: x_k * w^(k^2/2) convolved with w^(-k^2/2)
    std::size_t m = 1;
    while (m < 2 * n + 1) m <<= 1;
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<cplx> u(m, cplx(0.0)), v(m, cplx(0.0)), chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double ang = sign * M_PI * double((std::uint64_t(k) * k) % (2 * n)) / double(n);
        chirp[k] = cplx(std::cos(ang), std::sin(ang));
        u[k] = a[k] * chirp[k];
    }
    for (std::size_t k = 0; k < n; ++k) {
        v[k] = std::conj(chirp[k]);
        if (k) v[m - k] = std::conj(chirp[k]);
    }
    detail_fft::fft_pow2(u, false);
    detail_fft::fft_pow2(v, false);
    for (std::size_t i = 0; i < m; ++i) u[i] *= v[i];
    detail_fft::fft_pow2(u, true);
    for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
    if (inverse)
        for (auto& x : a) x /= double(n);
}

// 2D DFT of an h x w real field; returns row-major complex spectrum.
inline std::vector<cplx> fft2d(const std::vector<double>& field, std::size_t h, std::size_t w) {
    require(field.size() == h * w, errc::shape, "fft2d: size mismatch");
    std::vector<cplx> spec(h * w);
    for (std::size_t i = 0; i < h * w; ++i) spec[i] = cplx(field[i], 0.0);
    std::vector<cplx> line;
    for (std::size_t y = 0; y < h; ++y) {
        line.assign(spec.begin() + long(y * w), spec.begin() + long((y + 1) * w));
        fft(line);
        std::copy(line.begin(), line.end(), spec.begin() + long(y * w));
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) line[y] = spec[y * w + x];
        fft(line);
        for (std::size_t y = 0; y < h; ++y) spec[y * w + x] = line[y];
    }
    return spec;
}

// cyclic shift moving DC to (h/2, w/2)
template <typename T>
std::vector<T> fftshift2d(const std::vector<T>& spec, std::size_t h, std::size_t w) {
    std::vector<T> out(spec.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            out[((y + h / 2) % h) * w + ((x + w / 2) % w)] = spec[y * w + x];
    return out;
}

}  // namespace hyperdet
