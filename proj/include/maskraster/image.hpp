// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/gaussian.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace maskraster {

/// Interleaved RGB image in linear [0, 1].
template <std::floating_point T> struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data; // H × W × 3

    static Image zeros(int w, int h) { return {w, h, std::vector<T>(std::size_t(w) * h * 3, T(0))}; }
    static Image filled(int w, int h, const Vec3<T> &c) {
        Image img = zeros(w, h);
        for (std::size_t p = 0; p < img.pixel_count(); ++p)
            for (int k = 0; k < 3; ++k) img.data[3 * p + k] = c[k];
        return img;
    }
    [[nodiscard]] std::size_t pixel_count() const { return std::size_t(width) * height; }
    [[nodiscard]] T &at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
    [[nodiscard]] T at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
    [[nodiscard]] bool same_shape(const Image &o) const { return width == o.width && height == o.height; }

    template <std::floating_point U> [[nodiscard]] Image<U> cast() const {
        Image<U> out{width, height, {}};
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

template <std::floating_point T>
void
require_same_shape(const Image<T> &a, const Image<T> &b) {
    if (!a.same_shape(b) || a.data.size() != b.data.size()) {
        throw InvalidParameter("image dimensions differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                               " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
    }
}

template <std::floating_point T>
double
mse(const Image<T> &a, const Image<T> &b) {
    require_same_shape(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return a.data.empty() ? 0.0 : acc / double(a.data.size());
}

/// 10·log10(1 / MSE); +infinity for identical images.
template <std::floating_point T>
double
psnr(const Image<T> &a, const Image<T> &b) {
    const double e = mse(a, b);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / e);
}

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow> &
ssim_kernel() {
    static const std::array<double, kSsimWindow> k = [] {
        std::array<double, kSsimWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - kSsimWindow / 2;
            w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
            sum += w[i];
        }
        for (auto &v : w) v /= sum;
        return w;
    }();
    return k;
}

// Separable Gaussian filter on one W×H plane, zero padded, same-size output. The kernel is
// symmetric so this operator is its own adjoint.
inline std::vector<double>
gaussian_filter(const std::vector<double> &in, int w, int h) {
    const auto &k = ssim_kernel();
    constexpr int r = kSsimWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx >= 0 && xx < w) acc += k[i + r] * in[std::size_t(y) * w + xx];
            }
            tmp[std::size_t(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy >= 0 && yy < h) acc += k[i + r] * tmp[std::size_t(yy) * w + x];
            }
            out[std::size_t(y) * w + x] = acc;
        }
    return out;
}

template <std::floating_point T>
std::vector<double>
channel_plane(const Image<T> &img, int c) {
    std::vector<double> plane(img.pixel_count());
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = double(img.data[3 * p + c]);
    return plane;
}

} // namespace detail

/// Mean SSIM over all pixels and channels (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// zero padding). When `grad` is non-null it receives d(mean SSIM)/d(a).
template <std::floating_point T>
double
ssim(const Image<T> &a, const Image<T> &b, std::vector<T> *grad = nullptr) {
    require_same_shape(a, b);
    using namespace detail;
    const int w = a.width, h = a.height;
    const std::size_t n = a.pixel_count();
    if (n == 0) return 1.0;
    const double inv_count = 1.0 / double(3 * n);
    if (grad) grad->assign(a.data.size(), T(0));
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const auto x = channel_plane(a, c);
        const auto y = channel_plane(b, c);
        std::vector<double> xx(n), yy(n), xy(n);
        for (std::size_t p = 0; p < n; ++p) {
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mu_x = gaussian_filter(x, w, h);
        const auto mu_y = gaussian_filter(y, w, h);
        const auto m_xx = gaussian_filter(xx, w, h);
        const auto m_yy = gaussian_filter(yy, w, h);
        const auto m_xy = gaussian_filter(xy, w, h);
        std::vector<double> d_m1, d_m2, d_m12;
        if (grad) {
            d_m1.resize(n);
            d_m2.resize(n);
            d_m12.resize(n);
        }
        for (std::size_t p = 0; p < n; ++p) {
            const double mx = mu_x[p], my = mu_y[p];
            const double vx = m_xx[p] - mx * mx;
            const double vy = m_yy[p] - my * my;
            const double cxy = m_xy[p] - mx * my;
            const double a1 = 2.0 * mx * my + kSsimC1;
            const double a2 = 2.0 * cxy + kSsimC2;
            const double b1 = mx * mx + my * my + kSsimC1;
            const double b2 = vx + vy + kSsimC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad) {
                const double ds_dmu = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
                const double ds_dvar = -s / b2;
                const double ds_dcov = 2.0 * a1 / (b1 * b2);
                d_m1[p] = ds_dmu - 2.0 * mx * ds_dvar - my * ds_dcov;
                d_m2[p] = ds_dvar;
                d_m12[p] = ds_dcov;
            }
        }
        if (grad) {
            const auto g1 = gaussian_filter(d_m1, w, h);
            const auto g2 = gaussian_filter(d_m2, w, h);
            const auto g12 = gaussian_filter(d_m12, w, h);
            for (std::size_t p = 0; p < n; ++p) {
                (*grad)[3 * p + c] = T((g1[p] + 2.0 * x[p] * g2[p] + y[p] * g12[p]) * inv_count);
            }
        }
    }
    return total * inv_count;
}

/// Value and gradient (with respect to the first image) of a scalar image loss.
template <std::floating_point T> struct ImageLoss {
    double value = 0.0;
    std::vector<T> grad;
};

/// Mean absolute error; the subgradient at equality is 0.
template <std::floating_point T>
ImageLoss<T>
l1_loss(const Image<T> &rendered, const Image<T> &target) {
    require_same_shape(rendered, target);
    ImageLoss<T> out;
    out.grad.resize(rendered.data.size());
    const double inv = rendered.data.empty() ? 0.0 : 1.0 / double(rendered.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = double(rendered.data[i]) - double(target.data[i]);
        acc += std::abs(d);
        out.grad[i] = T(d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0));
    }
    out.value = acc * inv;
    return out;
}

/// (1 − w)·L1 + w·(1 − SSIM).
template <std::floating_point T>
ImageLoss<T>
render_loss(const Image<T> &rendered, const Image<T> &target, double ssim_weight) {
    if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) throw InvalidParameter("ssim_weight must be in [0, 1]");
    ImageLoss<T> out = l1_loss(rendered, target);
    out.value *= (1.0 - ssim_weight);
    for (auto &g : out.grad) g = T(double(g) * (1.0 - ssim_weight));
    if (ssim_weight > 0.0) {
        std::vector<T> g_ssim;
        const double s = ssim(rendered, target, &g_ssim);
        out.value += ssim_weight * (1.0 - s);
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] -= T(ssim_weight * double(g_ssim[i]));
    }
    return out;
}

/// L = L_render + λ_m·L_m.
inline double
total_loss(double render, double mask, double lambda) {
    if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be >= 0");
    return render + lambda * mask;
}

} // namespace maskraster
