// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace testing_support {

using namespace maskraster;

/// SH DC coefficient that evaluates to `value` (degree 0, with the +0.5 offset).
inline double
dc_for(double value) {
    return (value - 0.5) / sh_constants::c0;
}

/// Camera at the origin looking down +z; pixel (cx, cy) sits on the optical axis.
inline Camera<double>
axis_camera(int width = 8, int height = 8, double focal = 10.0) {
    Camera<double> c;
    c.width = width;
    c.height = height;
    c.fx = c.fy = focal;
    c.cx = double(width / 2);
    c.cy = double(height / 2);
    return c;
}

/// Appends a small isotropic degree-0 Gaussian on the optical axis at `depth`.
inline void
add_axis_splat(GaussianCloud<double> &c, double depth, double opacity, const Vec3<double> &color,
               double log_scale = std::log(0.01)) {
    const std::size_t i = c.size();
    c.resize(i + 1);
    c.centers[i] = Vec3<double>(0, 0, depth);
    c.opacity_logits[i] = inverse_sigmoid(opacity);
    c.log_scales[i] = Vec3<double>::Constant(log_scale);
    auto sh = c.sh_of(i);
    for (int ch = 0; ch < 3; ++ch) sh[ch] = dc_for(color[ch]);
}

inline GaussianCloud<double>
empty_cloud(int sh_degree = 0) {
    GaussianCloud<double> c;
    c.sh_degree = sh_degree;
    return c;
}

/// Random scene in front of a look-at camera; a mix of sizes so many splats overlap.
inline GaussianCloud<double>
random_cloud(std::uint64_t seed, std::size_t n, int sh_degree = 1, double max_opacity = 0.95) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    GaussianCloud<double> c;
    c.sh_degree = sh_degree;
    c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.centers[i] = Vec3<double>(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
        c.opacity_logits[i] = inverse_sigmoid(0.05 + (max_opacity - 0.05) * u(rng));
        for (int k = 0; k < 3; ++k) c.log_scales[i][k] = std::log(0.03 + 0.3 * u(rng));
        c.rotations[i] = Vec4<double>(n01(rng), n01(rng), n01(rng), n01(rng));
        auto sh = c.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = dc_for(u(rng));
        for (std::size_t k = 3; k < sh.size(); ++k) sh[k] = 0.1 * n01(rng);
    }
    return c;
}

inline Camera<double>
scene_camera(int width = 64, int height = 64) {
    return Camera<double>::look_at({0.2, -0.3, -4.0}, {0, 0, 0}, {0, -1, 0}, width, height, 1.0 * width);
}

inline std::vector<double>
random_binary_masks(std::uint64_t seed, std::size_t n, double p_on = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p_on);
    std::vector<double> m(n);
    for (auto &v : m) v = b(rng) ? 1.0 : 0.0;
    return m;
}

inline double
max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace testing_support
