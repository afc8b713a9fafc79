// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/render.hpp"
#include "maskraster/sh.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskraster {

/// Everything the back-to-front recursion needs about one contributor.
template <std::floating_point T> struct BlendEntry {
    T alpha = 0;
    T transmittance = 0; // T_i
    T mask = 1;          // M_i, may be fractional
    Vec3<T> color = Vec3<T>::Zero();
};

template <std::floating_point T> struct PixelGrad {
    T d_mask = 0;
    T d_alpha = 0;
    Vec3<T> d_color = Vec3<T>::Zero();
};

inline constexpr double kBackgroundDenominatorFloor = 1e-8;

/// Gradients of one pixel's loss with respect to each contributor's mask, α and color.
///
/// Walks the contributors back to front keeping b, the color composited behind the current
/// splat (background excluded), and adds the background path through T_{N+1}:
///   dL/dM_i = α_i·T_i·g·(c_i − b_{i+1}) − α_i·T_{N+1}/(1 − α_i·M_i)·g·c_bg
///   dL/dα_i = M_i·T_i·g·(c_i − b_{i+1}) − M_i·T_{N+1}/(1 − α_i·M_i)·g·c_bg
///   dL/dc_i = M_i·α_i·T_i·g
/// Returns the number of times the background denominator hit its floor.
template <std::floating_point T>
std::size_t
backward_pixel(std::span<const BlendEntry<T>> entries, const Vec3<T> &dL_dc, const Vec3<T> &background,
               T final_transmittance, std::span<PixelGrad<T>> out) {
    std::size_t guard_events = 0;
    Vec3<T> behind = Vec3<T>::Zero();
    const T g_bg = dL_dc.dot(background);
    for (std::size_t k = entries.size(); k-- > 0;) {
        const BlendEntry<T> &e = entries[k];
        const T occupancy = e.alpha * e.mask;
        T denom = T(1) - occupancy;
        if (denom < T(kBackgroundDenominatorFloor)) {
            denom = T(kBackgroundDenominatorFloor);
            ++guard_events;
        }
        const T gain = dL_dc.dot(e.color - behind);
        const T bg_path = final_transmittance / denom * g_bg;
        out[k].d_mask = e.alpha * e.transmittance * gain - e.alpha * bg_path;
        out[k].d_alpha = e.mask * e.transmittance * gain - e.mask * bg_path;
        out[k].d_color = (e.mask * e.alpha * e.transmittance) * dL_dc;
        behind = occupancy * e.color + (T(1) - occupancy) * behind;
    }
    return guard_events;
}

/// Chain of dL/dα through α = min(alpha_max, s·o·G), G = exp(−½ dᵀ·conic·d), d = pixel − mean2d.
template <std::floating_point T> struct AlphaGrad {
    T d_opacity = 0;       // w.r.t. o
    T d_opacity_logit = 0; // w.r.t. logit(o)
    T d_scale = 0;         // w.r.t. the opacity multiplier s (mask under opacity masking)
    Vec2<T> d_mean2d = Vec2<T>::Zero();
    Vec3<T> d_conic = Vec3<T>::Zero();
};

template <std::floating_point T>
AlphaGrad<T>
backward_alpha_chain(T d_alpha, const Splat2D<T> &splat, const Vec2<T> &pixel, const RasterConfig &config = {},
                     T opacity_scale = T(1)) {
    AlphaGrad<T> g;
    const T dx = pixel[0] - splat.mean2d[0];
    const T dy = pixel[1] - splat.mean2d[1];
    const T power = gaussian_power(splat.conic, dx, dy);
    if (power > T(0)) return g;
    const T gauss = std::exp(power);
    const T alpha = opacity_scale * splat.opacity * gauss;
    if (alpha >= T(config.alpha_max)) return g; // clamp active: flat
    g.d_opacity = d_alpha * opacity_scale * gauss;
    g.d_scale = d_alpha * splat.opacity * gauss;
    g.d_opacity_logit = g.d_opacity * splat.opacity * (T(1) - splat.opacity);
    const T da = d_alpha * alpha;
    const Vec3<T> &q = splat.conic;
    g.d_mean2d = Vec2<T>(da * (q[0] * dx + q[1] * dy), da * (q[1] * dx + q[2] * dy));
    g.d_conic = Vec3<T>(T(-0.5) * da * dx * dx, -da * dx * dy, T(-0.5) * da * dy * dy);
    return g;
}

/// Accumulated gradients for one training step, indexed by Gaussian.
template <std::floating_point T> struct GradientSet {
    std::vector<Vec3<T>> d_centers;
    std::vector<T> d_opacity_logits;
    std::vector<Vec3<T>> d_log_scales;
    std::vector<Vec4<T>> d_rotations;
    std::vector<T> d_sh;
    std::vector<T> d_mask_soft;
    // |dL/dmean2d| of this view in normalized device units (pixel gradient × half image size),
    // for densification statistics.
    std::vector<T> screen_grad_norm;
    std::vector<std::uint8_t> visible;
    std::size_t overflow_count = 0;
    std::size_t guard_events = 0;

    static GradientSet zeros(const GaussianCloud<T> &cloud) {
        GradientSet g;
        const std::size_t n = cloud.size();
        g.d_centers.assign(n, Vec3<T>::Zero());
        g.d_opacity_logits.assign(n, T(0));
        g.d_log_scales.assign(n, Vec3<T>::Zero());
        g.d_rotations.assign(n, Vec4<T>::Zero());
        g.d_sh.assign(cloud.sh.size(), T(0));
        g.d_mask_soft.assign(n, T(0));
        g.screen_grad_norm.assign(n, T(0));
        g.visible.assign(n, 0);
        return g;
    }

    /// Throws std::runtime_error naming the first non-finite entry.
    void check_finite() const {
        auto fail = [](const char *what, std::size_t i) {
            throw std::runtime_error(std::string("non-finite gradient in ") + what + " at index " + std::to_string(i));
        };
        for (std::size_t i = 0; i < d_centers.size(); ++i)
            if (!d_centers[i].allFinite()) fail("centers", i);
        for (std::size_t i = 0; i < d_opacity_logits.size(); ++i)
            if (!std::isfinite(d_opacity_logits[i])) fail("opacity_logits", i);
        for (std::size_t i = 0; i < d_log_scales.size(); ++i)
            if (!d_log_scales[i].allFinite()) fail("log_scales", i);
        for (std::size_t i = 0; i < d_rotations.size(); ++i)
            if (!d_rotations[i].allFinite()) fail("rotations", i);
        for (std::size_t i = 0; i < d_sh.size(); ++i)
            if (!std::isfinite(d_sh[i])) fail("sh", i);
        for (std::size_t i = 0; i < d_mask_soft.size(); ++i)
            if (!std::isfinite(d_mask_soft[i])) fail("mask_soft", i);
    }
};

/// Per-splat screen-space gradients of one view (indexed like the view's splat array).
template <std::floating_point T> struct SplatGrads {
    std::vector<Vec2<T>> d_mean2d;
    std::vector<Vec3<T>> d_conic;
    std::vector<Vec3<T>> d_color;
    std::vector<T> d_opacity; // w.r.t. o
    std::vector<T> d_mask;
    std::size_t guard_events = 0;

    void resize(std::size_t n) {
        d_mean2d.assign(n, Vec2<T>::Zero());
        d_conic.assign(n, Vec3<T>::Zero());
        d_color.assign(n, Vec3<T>::Zero());
        d_opacity.assign(n, T(0));
        d_mask.assign(n, T(0));
    }
};

enum class Accumulation {
    deterministic, // per-tile buffers reduced in tile order
    shared_atomic  // one shared buffer, atomic adds; summation order varies between runs
};

struct BackwardOptions {
    MaskApplication application = MaskApplication::rasterization;
    Accumulation accumulation = Accumulation::deterministic;
    unsigned workers = 0;
};

namespace detail {

template <std::floating_point T>
inline void
atomic_add(T &target, T value) {
    std::atomic_ref<T>(target).fetch_add(value, std::memory_order_relaxed);
}

template <std::floating_point T>
void
backward_tile(std::size_t tile, const ProjectedView<T> &view, const FrameBuffer<T> &fb, std::span<const T> masks,
              std::span<const T> dL_dimage, const Vec3<T> &background, const RasterConfig &config,
              const BackwardOptions &options, SplatGrads<T> &local, SplatGrads<T> *shared) {
    const TileBinning &b = view.binning;
    const int ts = b.tile_size;
    const int x0 = int(tile % std::size_t(b.tiles_x)) * ts;
    const int y0 = int(tile / std::size_t(b.tiles_x)) * ts;
    const int x1 = std::min(view.width, x0 + ts);
    const int y1 = std::min(view.height, y0 + ts);
    const auto list = b.tile(tile);
    const auto &splats = view.splats();
    const bool masked = !masks.empty();
    const bool opacity_masking = masked && options.application == MaskApplication::opacity;

    if (!shared) local.resize(list.size());
    std::vector<BlendEntry<T>> entries;
    std::vector<PixelGrad<T>> grads;

    auto add = [&](std::uint32_t slot, const AlphaGrad<T> &ag, const PixelGrad<T> &pg, T d_mask) {
        if (shared) {
            const std::uint32_t si = list[slot];
            for (int k = 0; k < 2; ++k) atomic_add(shared->d_mean2d[si][k], ag.d_mean2d[k]);
            for (int k = 0; k < 3; ++k) atomic_add(shared->d_conic[si][k], ag.d_conic[k]);
            for (int k = 0; k < 3; ++k) atomic_add(shared->d_color[si][k], pg.d_color[k]);
            atomic_add(shared->d_opacity[si], ag.d_opacity);
            atomic_add(shared->d_mask[si], d_mask);
            return;
        }
        local.d_mean2d[slot] += ag.d_mean2d;
        local.d_conic[slot] += ag.d_conic;
        local.d_color[slot] += pg.d_color;
        local.d_opacity[slot] += ag.d_opacity;
        local.d_mask[slot] += d_mask;
    };

    for (int py = y0; py < y1; ++py) {
        for (int px = x0; px < x1; ++px) {
            const std::size_t p = fb.pixel_index(px, py);
            const auto recs = fb.records(px, py);
            if (recs.empty()) continue;
            const Vec3<T> g(dL_dimage[3 * p], dL_dimage[3 * p + 1], dL_dimage[3 * p + 2]);
            entries.resize(recs.size());
            grads.assign(recs.size(), PixelGrad<T>{});
            for (std::size_t k = 0; k < recs.size(); ++k) {
                const Splat2D<T> &s = splats[recs[k].splat];
                const T m = masked ? masks[s.source_index] : T(1);
                entries[k] = {recs[k].alpha, recs[k].transmittance, opacity_masking ? T(1) : m, s.color};
            }
            local.guard_events +=
                backward_pixel<T>(entries, g, background, fb.final_transmittance[p], std::span<PixelGrad<T>>(grads));
            const Vec2<T> pix{T(px), T(py)};
            for (std::size_t k = 0; k < recs.size(); ++k) {
                const Splat2D<T> &s = splats[recs[k].splat];
                const PixelGrad<T> &pg = grads[k];
                AlphaGrad<T> ag;
                T d_mask = pg.d_mask;
                if (opacity_masking) {
                    // α = min(alpha_max, M·o·G): the mask only reaches the loss through α.
                    const T m = masks[s.source_index];
                    if (pg.d_alpha != T(0)) ag = backward_alpha_chain(pg.d_alpha, s, pix, config, m);
                    d_mask = ag.d_scale;
                } else if (pg.d_alpha != T(0)) {
                    ag = backward_alpha_chain(pg.d_alpha, s, pix, config);
                }
                add(recs[k].slot, ag, pg, d_mask);
            }
        }
    }
}

} // namespace detail

/// Screen-space backward over all tiles of a gradient-mode forward pass.
template <std::floating_point T>
SplatGrads<T>
rasterize_backward(const ProjectedView<T> &view, const FrameBuffer<T> &fb, std::span<const T> masks,
                   std::span<const T> dL_dimage, const Vec3<T> &background, const RasterConfig &config = {},
                   const BackwardOptions &options = {}) {
    if (!fb.has_records) throw InvalidParameter("backward needs a gradient-mode forward pass");
    if (dL_dimage.size() != fb.color.size()) throw InvalidParameter("dL/dimage has the wrong size");
    if (!masks.empty() && masks.size() != view.cloud_size) throw InvalidParameter("mask length mismatch");

    const std::size_t ntiles = view.binning.tile_count();
    SplatGrads<T> total;
    total.resize(view.splats().size());

    if (options.accumulation == Accumulation::shared_atomic) {
        std::vector<SplatGrads<T>> guards(ntiles);
        parallel_for(
            ntiles,
            [&](std::size_t t) {
                detail::backward_tile(t, view, fb, masks, dL_dimage, background, config, options, guards[t], &total);
            },
            options.workers);
        for (const auto &g : guards) total.guard_events += g.guard_events;
        return total;
    }

    std::vector<SplatGrads<T>> per_tile(ntiles);
    parallel_for(
        ntiles,
        [&](std::size_t t) {
            detail::backward_tile(t, view, fb, masks, dL_dimage, background, config, options, per_tile[t],
                                  static_cast<SplatGrads<T> *>(nullptr));
        },
        options.workers);
    for (std::size_t t = 0; t < ntiles; ++t) {
        const auto list = view.binning.tile(t);
        const SplatGrads<T> &g = per_tile[t];
        total.guard_events += g.guard_events;
        for (std::size_t slot = 0; slot < g.d_mask.size(); ++slot) {
            const std::uint32_t si = list[slot];
            total.d_mean2d[si] += g.d_mean2d[slot];
            total.d_conic[si] += g.d_conic[slot];
            total.d_color[si] += g.d_color[slot];
            total.d_opacity[si] += g.d_opacity[slot];
            total.d_mask[si] += g.d_mask[slot];
        }
    }
    return total;
}

namespace detail {

// d R(q̂) / d q̂_c for a unit (w, x, y, z) quaternion.
template <std::floating_point T>
std::array<Mat3<T>, 4>
rotation_derivatives(const Vec4<T> &qn) {
    const T w = qn[0], x = qn[1], y = qn[2], z = qn[3];
    std::array<Mat3<T>, 4> d;
    d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (auto &m : d) m *= T(2);
    return d;
}

} // namespace detail

/// Chains screen-space gradients of one splat back to its 3D parameters and adds them into
/// `out` at the splat's source index. d_opacity is with respect to o (not the logit).
template <std::floating_point T>
void
backward_projection_chain(const Vec2<T> &d_mean2d, const Vec3<T> &d_conic, const Vec3<T> &d_color, T d_opacity,
                          const Splat2D<T> &splat, const GaussianCloud<T> &cloud, const Camera<T> &camera,
                          GradientSet<T> &out) {
    const std::size_t i = splat.source_index;
    const Vec3<T> &p = cloud.centers[i];
    const Vec4<T> &q = cloud.rotations[i];
    const Vec3<T> scales = cloud.scales(i);
    const Mat3<T> &w = camera.rotation;
    const Vec3<T> t = camera.to_camera(p);
    const T fx = camera.fx, fy = camera.fy;
    const T iz = T(1) / t[2];
    const T iz2 = iz * iz;

    // Opacity.
    const T o = splat.opacity;
    out.d_opacity_logits[i] += d_opacity * o * (T(1) - o);

    // Conic -> 2D covariance: d(A⁻¹) = −A·dA·A.
    const Mat3<T> rot = quaternion_to_rotation(q);
    const Mat3<T> m = rot * scales.asDiagonal();
    const Mat3<T> cov3d = m * m.transpose();
    const Eigen::Matrix<T, 2, 3> jac = projection_jacobian(camera, t);
    const Mat3<T> view_cov = w * cov3d * w.transpose();
    Mat2<T> conic;
    conic << splat.conic[0], splat.conic[1], splat.conic[1], splat.conic[2];
    Mat2<T> g_conic;
    g_conic << d_conic[0], T(0.5) * d_conic[1], T(0.5) * d_conic[1], d_conic[2];
    const Mat2<T> g_cov2d = -(conic * g_conic * conic);

    // 2D covariance -> view-space covariance and Jacobian.
    const Mat3<T> g_view_cov = jac.transpose() * g_cov2d * jac;
    const Eigen::Matrix<T, 2, 3> g_jac = T(2) * g_cov2d * jac * view_cov;

    // Camera-space position gradient from the Jacobian and the projected mean.
    Vec3<T> g_t = Vec3<T>::Zero();
    g_t[0] += g_jac(0, 2) * (-fx * iz2);
    g_t[1] += g_jac(1, 2) * (-fy * iz2);
    g_t[2] += g_jac(0, 0) * (-fx * iz2) + g_jac(0, 2) * (T(2) * fx * t[0] * iz2 * iz) + g_jac(1, 1) * (-fy * iz2) +
              g_jac(1, 2) * (T(2) * fy * t[1] * iz2 * iz);
    g_t[0] += d_mean2d[0] * fx * iz;
    g_t[1] += d_mean2d[1] * fy * iz;
    g_t[2] += -d_mean2d[0] * fx * t[0] * iz2 - d_mean2d[1] * fy * t[1] * iz2;
    Vec3<T> g_p = w.transpose() * g_t;

    // View-space covariance -> world covariance -> (rotation, scale).
    Mat3<T> g_cov3d = w.transpose() * g_view_cov * w;
    g_cov3d = T(0.5) * (g_cov3d + g_cov3d.transpose()).eval();
    const Mat3<T> g_m = T(2) * g_cov3d * m;
    Vec3<T> g_log_scale;
    for (int j = 0; j < 3; ++j) g_log_scale[j] = g_m.col(j).dot(rot.col(j)) * scales[j];
    const Mat3<T> g_rot = g_m * scales.asDiagonal();
    const T qnorm = q.norm();
    const Vec4<T> qn = q / qnorm;
    const auto d_rot = detail::rotation_derivatives(qn);
    Vec4<T> g_qn;
    for (int c = 0; c < 4; ++c) g_qn[c] = g_rot.cwiseProduct(d_rot[c]).sum();
    const Vec4<T> g_q = (g_qn - qn * qn.dot(g_qn)) / qnorm;

    // Color -> SH coefficients and view direction.
    Vec3<T> g_c = d_color;
    for (int k = 0; k < 3; ++k)
        if (splat.color_clamped & (1u << k)) g_c[k] = T(0);
    const Vec3<T> v = p - camera.position();
    const T vnorm = v.norm();
    const Vec3<T> dir = vnorm > T(0) ? Vec3<T>(v / vnorm) : Vec3<T>(0, 0, 1);
    std::array<T, 16> basis{};
    std::array<Vec3<T>, 16> basis_grad{};
    sh_basis_with_jacobian(dir, cloud.sh_degree, basis, basis_grad);
    const int count = cloud.coeffs_per_channel();
    const auto coeffs = cloud.sh_of(i);
    T *g_sh = out.d_sh.data() + i * cloud.sh_stride();
    Vec3<T> g_dir = Vec3<T>::Zero();
    for (int k = 0; k < count; ++k) {
        g_sh[3 * k + 0] += basis[k] * g_c[0];
        g_sh[3 * k + 1] += basis[k] * g_c[1];
        g_sh[3 * k + 2] += basis[k] * g_c[2];
        const T w_k = coeffs[3 * k] * g_c[0] + coeffs[3 * k + 1] * g_c[1] + coeffs[3 * k + 2] * g_c[2];
        g_dir += w_k * basis_grad[k];
    }
    if (vnorm > T(0)) g_p += (g_dir - dir * dir.dot(g_dir)) / vnorm;

    out.d_centers[i] += g_p;
    out.d_log_scales[i] += g_log_scale;
    out.d_rotations[i] += g_q;
}

/// Full backward of one rendered view into a GradientSet (mask gradients in d_mask_soft).
template <std::floating_point T>
void
backward_view(const GaussianCloud<T> &cloud, const Camera<T> &camera, const ProjectedView<T> &view,
              const FrameBuffer<T> &fb, std::span<const T> masks, std::span<const T> dL_dimage,
              const Vec3<T> &background, const RasterConfig &config, const BackwardOptions &options,
              GradientSet<T> &out) {
    const SplatGrads<T> sg = rasterize_backward(view, fb, masks, dL_dimage, background, config, options);
    const auto &splats = view.splats();
    const T half_w = T(0.5) * T(view.width), half_h = T(0.5) * T(view.height);
    for (std::size_t k = 0; k < splats.size(); ++k) {
        const Splat2D<T> &s = splats[k];
        backward_projection_chain(sg.d_mean2d[k], sg.d_conic[k], sg.d_color[k], sg.d_opacity[k], s, cloud, camera,
                                  out);
        out.d_mask_soft[s.source_index] += sg.d_mask[k];
        out.screen_grad_norm[s.source_index] +=
            Vec2<T>(sg.d_mean2d[k][0] * half_w, sg.d_mean2d[k][1] * half_h).norm();
        out.visible[s.source_index] = 1;
    }
    out.overflow_count += fb.overflow_pixels;
    out.guard_events += sg.guard_events;
}

template <std::floating_point T>
GradientSet<T>
backward_view(const GaussianCloud<T> &cloud, const Camera<T> &camera, const ProjectedView<T> &view,
              const FrameBuffer<T> &fb, std::span<const T> masks, std::span<const T> dL_dimage,
              const Vec3<T> &background, const RasterConfig &config = {}, const BackwardOptions &options = {}) {
    GradientSet<T> g = GradientSet<T>::zeros(cloud);
    backward_view(cloud, camera, view, fb, masks, dL_dimage, background, config, options, g);
    return g;
}

} // namespace maskraster
