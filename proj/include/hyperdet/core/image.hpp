#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/tensor.hpp"

namespace hyperdet {

// H x W x C raster, interleaved, values nominally in [0,1] for photographs.
// Residual views reuse the type with unbounded values.
struct Image {
    std::size_t height = 0, width = 0, channels = 0;
    std::vector<double> px;  // h * w * c interleaved

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), px(h * w * c, 0.0) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return px[(y * width + x) * channels + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return px[(y * width + x) * channels + c];
    }

    std::size_t size() const { return px.size(); }

    bool all_finite() const {
        for (double v : px)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

inline bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.px == b.px;
}

inline double max_abs_diff_img(const Image& a, const Image& b) {
    require(a.same_shape(b), errc::shape, "max_abs_diff_img: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i)
        m = std::max(m, std::fabs(a.px[i] - b.px[i]));
    return m;
}

// symmetric reflection (edge pixel included once): -1 -> 0, -2 -> 1, n -> n-1
inline std::size_t reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * n;
    long m = i % period;
    if (m < 0) m += period;
    if (m >= n) m = period - 1 - m;
    return std::size_t(m);
}

inline std::uint8_t to_u8(double v) {
    const double s = std::clamp(v, 0.0, 1.0) * 255.0;
    return std::uint8_t(std::lround(s));
}

inline Image from_u8(const std::uint8_t* data, std::size_t h, std::size_t w, std::size_t c) {
    Image img(h, w, c);
    for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = double(data[i]) / 255.0;
    return img;
}

inline std::vector<std::uint8_t> to_u8_buffer(const Image& img) {
    std::vector<std::uint8_t> out(img.px.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_u8(img.px[i]);
    return out;
}

// bilinear, half-pixel centers
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    const double sy = double(src.height) / double(out_h);
    const double sx = double(src.width) / double(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = (double(y) + 0.5) * sy - 0.5;
        const double fy0 = std::floor(fy);
        const double wy = fy - fy0;
        const std::size_t y0 = std::size_t(std::clamp<double>(fy0, 0, double(src.height - 1)));
        const std::size_t y1 = std::size_t(std::clamp<double>(fy0 + 1, 0, double(src.height - 1)));
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (double(x) + 0.5) * sx - 0.5;
            const double fx0 = std::floor(fx);
            const double wx = fx - fx0;
            const std::size_t x0 = std::size_t(std::clamp<double>(fx0, 0, double(src.width - 1)));
            const std::size_t x1 =
                std::size_t(std::clamp<double>(fx0 + 1, 0, double(src.width - 1)));
            for (std::size_t c = 0; c < src.channels; ++c) {
                const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                const double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                dst.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

inline Image to_channels(const Image& src, std::size_t c_out) {
    if (src.channels == c_out) return src;
    Image dst(src.height, src.width, c_out);
    for (std::size_t y = 0; y < src.height; ++y)
        for (std::size_t x = 0; x < src.width; ++x)
            for (std::size_t c = 0; c < c_out; ++c)
                dst.at(y, x, c) = src.at(y, x, std::min(c, src.channels - 1));
    return dst;
}

// mean over channels; used for spectral analysis
inline std::vector<double> luminance(const Image& img) {
    std::vector<double> lum(img.height * img.width, 0.0);
    for (std::size_t i = 0; i < lum.size(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < img.channels; ++c) s += img.px[i * img.channels + c];
        lum[i] = s / double(img.channels);
    }
    return lum;
}

inline double psnr(const Image& a, const Image& b) {
    require(a.same_shape(b), errc::shape, "psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        mse += d * d;
    }
    mse /= double(a.px.size());
    if (mse == 0.0) return HUGE_VAL;
    return 10.0 * std::log10(1.0 / mse);
}

// truncated sampled Gaussian, radius ceil(3*sigma), normalized to sum 1
inline std::vector<double> gaussian_taps(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const long radius = long(std::ceil(3.0 * sigma));
    std::vector<double> taps(std::size_t(2 * radius + 1));
    double sum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        taps[std::size_t(i + radius)] = v;
        sum += v;
    }
    for (auto& t : taps) t /= sum;
    return taps;
}

// separable Gaussian blur with symmetric boundary reflection
inline Image gaussian_blur(const Image& src, double sigma) {
    if (sigma <= 0.0) return src;
    const auto taps = gaussian_taps(sigma);
    const long radius = long(taps.size() / 2);
    Image tmp(src.height, src.width, src.channels);
    for (std::size_t y = 0; y < src.height; ++y)
        for (std::size_t x = 0; x < src.width; ++x)
            for (std::size_t c = 0; c < src.channels; ++c) {
                double acc = 0.0;
                for (long t = -radius; t <= radius; ++t)
                    acc += taps[std::size_t(t + radius)] *
                           src.at(y, reflect_index(long(x) + t, long(src.width)), c);
                tmp.at(y, x, c) = acc;
            }
    Image dst(src.height, src.width, src.channels);
    for (std::size_t y = 0; y < src.height; ++y)
        for (std::size_t x = 0; x < src.width; ++x)
            for (std::size_t c = 0; c < src.channels; ++c) {
                double acc = 0.0;
                for (long t = -radius; t <= radius; ++t)
                    acc += taps[std::size_t(t + radius)] *
                           tmp.at(reflect_index(long(y) + t, long(src.height)), x, c);
                dst.at(y, x, c) = acc;
            }
    return dst;
}

}  // namespace hyperdet
