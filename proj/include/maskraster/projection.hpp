// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/gaussian.hpp"
#include "maskraster/sh.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace maskraster {

/// Thresholds shared by projection, rendering and the oracle.
struct RasterConfig {
    double alpha_max = 0.99;          // α clamp
    double alpha_min = 1.0 / 255.0;   // contributor cutoff
    double cov2d_floor = 0.3;         // px², added to both diagonal entries
    double transmittance_min = 1e-4;  // per-pixel early stop
    bool early_stop = true;
    int tile_size = 16;
    int max_contributors = 1024;      // per pixel, gradient mode only

    void validate() const {
        if (!(alpha_min > 0.0) || !(alpha_max <= 1.0) || !(alpha_min < alpha_max)) {
            throw InvalidParameter("require 0 < alpha_min < alpha_max <= 1");
        }
        if (!(cov2d_floor >= 0.0)) throw InvalidParameter("cov2d_floor must be >= 0");
        if (tile_size < 1) throw InvalidParameter("tile_size must be >= 1");
        if (max_contributors < 1) throw InvalidParameter("max_contributors must be >= 1");
    }
};

/// One Gaussian projected into one view.
template <std::floating_point T> struct Splat2D {
    Vec2<T> mean2d = Vec2<T>::Zero();
    Vec3<T> conic = Vec3<T>::Zero(); // (a, b, c) of the symmetric inverse covariance [[a, b], [b, c]]
    T depth = 0;
    Vec3<T> color = Vec3<T>::Zero();
    T opacity = 0;
    T radius = 0;
    std::uint32_t source_index = 0;
    std::uint8_t color_clamped = 0; // bit k set when channel k hit the >= 0 clamp
};

enum class SkipReason : std::uint8_t { none, behind_near_clip, singular_covariance, transparent, off_screen };

/// Screen-space Jacobian of the perspective projection at camera-space point t.
template <std::floating_point T>
Eigen::Matrix<T, 2, 3>
projection_jacobian(const Camera<T> &camera, const Vec3<T> &t) {
    const T inv_z = T(1) / t[2];
    Eigen::Matrix<T, 2, 3> j;
    j << camera.fx * inv_z, T(0), -camera.fx * t[0] * inv_z * inv_z,
        T(0), camera.fy * inv_z, -camera.fy * t[1] * inv_z * inv_z;
    return j;
}

/// Projected 2D covariance J·W·Σ·Wᵀ·Jᵀ plus the low-pass floor.
template <std::floating_point T>
Mat2<T>
projected_covariance(const Camera<T> &camera, const Vec3<T> &t, const Mat3<T> &cov3d, T floor) {
    const Eigen::Matrix<T, 2, 3> jw = projection_jacobian(camera, t) * camera.rotation;
    Mat2<T> cov = jw * cov3d * jw.transpose();
    cov(0, 1) = cov(1, 0) = T(0.5) * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += floor;
    cov(1, 1) += floor;
    return cov;
}

/// Half-width in pixels of the region where α can reach alpha_min.
///
/// α = o·exp(-½ dᵀΣ⁻¹d) ≥ alpha_min holds exactly inside the ellipse dᵀΣ⁻¹d ≤ 2·ln(o / alpha_min),
/// whose largest screen extent is √(λ_max(Σ) · 2·ln(o / alpha_min)). A one-pixel margin is added.
template <std::floating_point T>
T
footprint_radius(const Mat2<T> &cov2d, T opacity, double alpha_min) {
    const T half_trace = T(0.5) * (cov2d(0, 0) + cov2d(1, 1));
    const T half_diff = T(0.5) * (cov2d(0, 0) - cov2d(1, 1));
    const T lambda_max = half_trace + std::sqrt(half_diff * half_diff + cov2d(0, 1) * cov2d(0, 1));
    const T level = T(2) * std::log(opacity / T(alpha_min));
    if (!(level > T(0))) return T(0);
    return std::sqrt(lambda_max * level) + T(1);
}

template <std::floating_point T>
std::optional<Splat2D<T>>
project_splat(std::size_t index, const GaussianCloud<T> &cloud, const Camera<T> &camera,
              const RasterConfig &config = {}, SkipReason *reason = nullptr) {
    auto skip = [&](SkipReason r) -> std::optional<Splat2D<T>> {
        if (reason) *reason = r;
        return std::nullopt;
    };
    if (reason) *reason = SkipReason::none;

    const Vec3<T> t = camera.to_camera(cloud.centers[index]);
    if (!(t[2] > camera.near_clip)) return skip(SkipReason::behind_near_clip);

    const Mat3<T> cov3d = build_covariance(cloud.rotations[index], cloud.log_scales[index]);
    const Mat2<T> cov2d = projected_covariance(camera, t, cov3d, T(config.cov2d_floor));
    const T det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(0, 1);
    if (!(det > T(0)) || !std::isfinite(det)) return skip(SkipReason::singular_covariance);

    const T opacity = cloud.opacity(index);
    if (!(opacity >= T(config.alpha_min))) return skip(SkipReason::transparent);

    Splat2D<T> s;
    s.mean2d = Vec2<T>(camera.fx * t[0] / t[2] + camera.cx, camera.fy * t[1] / t[2] + camera.cy);
    s.conic = Vec3<T>(cov2d(1, 1) / det, -cov2d(0, 1) / det, cov2d(0, 0) / det);
    s.depth = t[2];
    s.opacity = opacity;
    s.radius = footprint_radius(cov2d, opacity, config.alpha_min);
    s.source_index = static_cast<std::uint32_t>(index);

    if (s.mean2d[0] + s.radius < T(0) || s.mean2d[0] - s.radius > T(camera.width - 1) ||
        s.mean2d[1] + s.radius < T(0) || s.mean2d[1] - s.radius > T(camera.height - 1)) {
        return skip(SkipReason::off_screen);
    }

    const Vec3<T> raw = eval_sh_unclamped(cloud.sh_of(index), Vec3<T>(cloud.centers[index] - camera.position()),
                                          cloud.sh_degree);
    for (int k = 0; k < 3; ++k) {
        if (raw[k] < T(0)) {
            s.color[k] = T(0);
            s.color_clamped |= std::uint8_t(1u << k);
        } else {
            s.color[k] = raw[k];
        }
    }
    return s;
}

/// Splats for every visible Gaussian of a view plus per-reason skip counts.
template <std::floating_point T> struct ProjectionResult {
    std::vector<Splat2D<T>> splats;
    std::size_t behind_near_clip = 0;
    std::size_t singular = 0;
    std::size_t transparent = 0;
    std::size_t off_screen = 0;
};

template <std::floating_point T>
ProjectionResult<T>
project_all(const GaussianCloud<T> &cloud, const Camera<T> &camera, const RasterConfig &config = {}) {
    ProjectionResult<T> out;
    out.splats.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        SkipReason reason{};
        if (auto s = project_splat(i, cloud, camera, config, &reason)) {
            out.splats.push_back(*s);
            continue;
        }
        switch (reason) {
        case SkipReason::behind_near_clip: ++out.behind_near_clip; break;
        case SkipReason::singular_covariance: ++out.singular; break;
        case SkipReason::transparent: ++out.transparent; break;
        case SkipReason::off_screen: ++out.off_screen; break;
        case SkipReason::none: break;
        }
    }
    return out;
}

/// Exponent -½ dᵀ·conic·d of a splat at a pixel.
template <std::floating_point T>
inline T
gaussian_power(const Vec3<T> &conic, T dx, T dy) {
    return T(-0.5) * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
}

/// Unclamped density o·G at a pixel; zero when the exponent is positive.
template <std::floating_point T>
inline T
eval_alpha_unclamped(const Splat2D<T> &splat, const Vec2<T> &pixel) {
    const T power = gaussian_power(splat.conic, pixel[0] - splat.mean2d[0], pixel[1] - splat.mean2d[1]);
    if (power > T(0)) return T(0);
    return splat.opacity * std::exp(power);
}

/// Density α = min(alpha_max, o·G) at a pixel. Callers treat α < alpha_min as zero.
template <std::floating_point T>
inline T
eval_alpha(const Splat2D<T> &splat, const Vec2<T> &pixel, const RasterConfig &config = {}) {
    return std::min(T(config.alpha_max), eval_alpha_unclamped(splat, pixel));
}

} // namespace maskraster
