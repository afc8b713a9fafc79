// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/binning.hpp"
#include "maskraster/mask.hpp"
#include "maskraster/parallel.hpp"
#include "maskraster/projection.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace maskraster {

/// One splat that passed the α cutoff at one pixel, in front-to-back order.
template <std::floating_point T> struct ContributorRecord {
    std::uint32_t splat = 0; // index into the view's splat array
    std::uint32_t slot = 0;  // position of the splat in its tile list
    T alpha = 0;             // clamped α actually blended (mask folded in for opacity masking)
    T transmittance = 0;     // T_i when the splat was reached
};

template <std::floating_point T> struct FrameBuffer {
    int width = 0;
    int height = 0;
    std::vector<T> color;               // H × W × 3
    std::vector<T> final_transmittance; // H × W
    std::vector<std::uint32_t> n_contrib;

    // Gradient mode only.
    bool has_records = false;
    int tile_size = 16;
    int tiles_x = 0;
    std::vector<std::vector<ContributorRecord<T>>> tile_records;
    std::vector<std::uint32_t> record_begin; // per pixel, offset into its tile's records
    std::size_t overflow_pixels = 0;

    [[nodiscard]] std::size_t pixel_index(int x, int y) const { return std::size_t(y) * width + x; }
    [[nodiscard]] Vec3<T> pixel(int x, int y) const {
        const std::size_t p = 3 * pixel_index(x, y);
        return {color[p], color[p + 1], color[p + 2]};
    }
    [[nodiscard]] std::span<const ContributorRecord<T>> records(int x, int y) const {
        const std::size_t p = pixel_index(x, y);
        const auto &tile = tile_records[std::size_t(y / tile_size) * tiles_x + x / tile_size];
        return {tile.data() + record_begin[p], n_contrib[p]};
    }
};

/// Projected splats of one view and their tile binning.
template <std::floating_point T> struct ProjectedView {
    int width = 0;
    int height = 0;
    std::size_t cloud_size = 0;
    ProjectionResult<T> projection;
    TileBinning binning;

    [[nodiscard]] const std::vector<Splat2D<T>> &splats() const { return projection.splats; }
};

template <std::floating_point T>
ProjectedView<T>
prepare_view(const GaussianCloud<T> &cloud, const Camera<T> &camera, const RasterConfig &config = {}) {
    camera.validate();
    config.validate();
    ProjectedView<T> v;
    v.width = camera.width;
    v.height = camera.height;
    v.cloud_size = cloud.size();
    v.projection = project_all(cloud, camera, config);
    v.binning = bin_and_sort<T>(v.projection.splats, camera.width, camera.height, config.tile_size);
    return v;
}

struct RenderOptions {
    bool gradient_mode = false;
    MaskApplication application = MaskApplication::rasterization;
    unsigned workers = 0; // 0 = hardware concurrency
};

namespace detail {

template <std::floating_point T>
void
render_tile(std::size_t tile, const ProjectedView<T> &view, std::span<const T> masks, const Vec3<T> &background,
            const RasterConfig &config, const RenderOptions &options, FrameBuffer<T> &fb, std::size_t &overflow) {
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
    const T alpha_max = T(config.alpha_max);
    const T alpha_min = T(config.alpha_min);
    const T t_min = T(config.transmittance_min);
    const std::size_t cap = std::size_t(config.max_contributors);
    std::vector<ContributorRecord<T>> *records = options.gradient_mode ? &fb.tile_records[tile] : nullptr;

    for (int py = y0; py < y1; ++py) {
        for (int px = x0; px < x1; ++px) {
            const std::size_t p = fb.pixel_index(px, py);
            T trans = T(1);
            Vec3<T> c = Vec3<T>::Zero();
            std::uint32_t count = 0;
            if (records) fb.record_begin[p] = std::uint32_t(records->size());
            for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
                const Splat2D<T> &s = splats[list[slot]];
                const T power = gaussian_power(s.conic, T(px) - s.mean2d[0], T(py) - s.mean2d[1]);
                if (power > T(0)) continue;
                T raw = s.opacity * std::exp(power);
                T blend = T(1);
                if (masked) {
                    const T m = masks[s.source_index];
                    if (opacity_masking) raw *= m;
                    else blend = m;
                }
                const T alpha = std::min(alpha_max, raw);
                if (alpha < alpha_min) continue;
                if (records) {
                    if (count == cap) {
                        ++overflow;
                        break;
                    }
                    records->push_back({list[slot], slot, alpha, trans});
                }
                ++count;
                c += (blend * alpha * trans) * s.color;
                trans = trans * (T(1) - blend * alpha);
                if (config.early_stop && trans < t_min) break;
            }
            fb.n_contrib[p] = count;
            fb.final_transmittance[p] = trans;
            fb.color[3 * p + 0] = c[0] + trans * background[0];
            fb.color[3 * p + 1] = c[1] + trans * background[1];
            fb.color[3 * p + 2] = c[2] + trans * background[2];
        }
    }
}

} // namespace detail

/// Front-to-back compositing with per-Gaussian masks. Masks are indexed by Gaussian (source)
/// index and may be fractional; M_i = 0 skips both the color term and the transmittance
/// update while the splat is still recorded as a contributor in gradient mode. An empty
/// mask span renders every Gaussian fully.
template <std::floating_point T>
FrameBuffer<T>
render_masked(const ProjectedView<T> &view, std::span<const T> masks, const Vec3<T> &background,
              const RasterConfig &config = {}, const RenderOptions &options = {}) {
    if (!masks.empty() && masks.size() != view.cloud_size) {
        throw InvalidParameter("mask length " + std::to_string(masks.size()) + " does not match cloud size " +
                               std::to_string(view.cloud_size));
    }
    FrameBuffer<T> fb;
    fb.width = view.width;
    fb.height = view.height;
    const std::size_t npix = std::size_t(view.width) * view.height;
    fb.color.assign(3 * npix, T(0));
    fb.final_transmittance.assign(npix, T(1));
    fb.n_contrib.assign(npix, 0);
    fb.tile_size = view.binning.tile_size;
    fb.tiles_x = view.binning.tiles_x;
    const std::size_t ntiles = view.binning.tile_count();
    if (options.gradient_mode) {
        fb.has_records = true;
        fb.tile_records.resize(ntiles);
        fb.record_begin.assign(npix, 0);
    }
    std::vector<std::size_t> overflow(ntiles, 0);
    parallel_for(
        ntiles,
        [&](std::size_t t) { detail::render_tile(t, view, masks, background, config, options, fb, overflow[t]); },
        options.workers);
    for (const std::size_t o : overflow) fb.overflow_pixels += o;
    return fb;
}

template <std::floating_point T>
FrameBuffer<T>
render_masked(const ProjectedView<T> &view, const MaskSample<T> &masks, const Vec3<T> &background,
              const RasterConfig &config = {}, const RenderOptions &options = {}) {
    if (masks.size() != view.cloud_size) {
        throw InvalidParameter("mask length " + std::to_string(masks.size()) + " does not match cloud size " +
                               std::to_string(view.cloud_size));
    }
    return render_masked(view, std::span<const T>(masks.hard), background, config, options);
}

/// Unmasked compositing; the same traversal as render_masked with every mask equal to 1.
template <std::floating_point T>
FrameBuffer<T>
render_standard(const ProjectedView<T> &view, const Vec3<T> &background, const RasterConfig &config = {},
                const RenderOptions &options = {}) {
    return render_masked(view, std::span<const T>{}, background, config, options);
}

} // namespace maskraster
