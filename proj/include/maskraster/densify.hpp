// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/backward.hpp"
#include "maskraster/gaussian.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace maskraster {

/// Clone/split schedule; iteration numbers are 1-based.
struct DensifyConfig {
    bool enabled = true;
    int interval = 100;
    int start = 500;
    int stop = 15000;
    double grad_threshold = 0.0002;
    double scale_threshold = 0.01; // fraction of the scene extent separating clone from split
    double min_opacity = 0.005;    // culled at every densify event
    int split_children = 2;
    double split_scale_divisor = 1.6;

    void validate() const {
        if (interval < 1) throw InvalidParameter("densify.interval must be >= 1");
        if (!(grad_threshold >= 0.0)) throw InvalidParameter("densify.grad_threshold must be >= 0");
        if (split_children < 1) throw InvalidParameter("densify.split_children must be >= 1");
        if (!(split_scale_divisor > 0.0)) throw InvalidParameter("densify.split_scale_divisor must be > 0");
    }

    [[nodiscard]] bool is_event(int iteration) const {
        return enabled && iteration > start && iteration < stop && iteration % interval == 0;
    }
};

/// Screen-space positional gradient accumulated across views since the last densify event.
struct DensifyStats {
    std::vector<double> grad_accum;
    std::vector<std::uint32_t> views;

    void reset(std::size_t n) {
        grad_accum.assign(n, 0.0);
        views.assign(n, 0);
    }

    template <std::floating_point T> void add(const GradientSet<T> &g) {
        for (std::size_t i = 0; i < grad_accum.size(); ++i) {
            if (!g.visible[i]) continue;
            grad_accum[i] += double(g.screen_grad_norm[i]);
            ++views[i];
        }
    }

    [[nodiscard]] double average(std::size_t i) const { return views[i] ? grad_accum[i] / double(views[i]) : 0.0; }
};

/// New cloud plus, for every output Gaussian, the input index whose optimizer state it keeps
/// (-1 for a freshly created Gaussian).
template <std::floating_point T> struct DensifyResult {
    GaussianCloud<T> cloud;
    std::vector<std::int64_t> source;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t culled = 0;
};

/// Clones small high-gradient Gaussians and splits large ones into `split_children` children
/// sampled from the parent's density with scale / split_scale_divisor, then culls Gaussians
/// below min_opacity. Every new Gaussian copies its parent's other attributes, mask logits
/// included.
template <std::floating_point T>
DensifyResult<T>
densify(const GaussianCloud<T> &cloud, const DensifyStats &stats, const DensifyConfig &config, double extent,
        std::mt19937_64 &rng) {
    config.validate();
    const std::size_t n = cloud.size();
    if (stats.grad_accum.size() != n) throw InvalidParameter("densify stats do not match cloud size");
    DensifyResult<T> out;
    out.cloud.sh_degree = cloud.sh_degree;
    std::normal_distribution<double> normal(0.0, 1.0);
    const double split_at = config.scale_threshold * extent;

    std::vector<std::size_t> clones, splits;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(stats.average(i) >= config.grad_threshold) || stats.views[i] == 0) continue;
        if (double(cloud.scales(i).maxCoeff()) <= split_at) clones.push_back(i);
        else splits.push_back(i);
    }
    std::vector<std::uint8_t> is_split(n, 0);
    for (const std::size_t i : splits) is_split[i] = 1;

    // Originals (split parents are replaced by their children).
    for (std::size_t i = 0; i < n; ++i) {
        if (is_split[i]) continue;
        out.cloud.push_back_from(cloud, i);
        out.source.push_back(std::int64_t(i));
    }
    for (const std::size_t i : clones) {
        out.cloud.push_back_from(cloud, i);
        out.source.push_back(-1);
    }
    for (const std::size_t i : splits) {
        const Vec3<T> s = cloud.scales(i);
        const Mat3<T> r = quaternion_to_rotation(cloud.rotations[i]);
        for (int c = 0; c < config.split_children; ++c) {
            out.cloud.push_back_from(cloud, i);
            const std::size_t j = out.cloud.size() - 1;
            Vec3<T> offset;
            for (int k = 0; k < 3; ++k) offset[k] = T(normal(rng)) * s[k];
            out.cloud.centers[j] = cloud.centers[i] + r * offset;
            out.cloud.log_scales[j] = cloud.log_scales[i].array() - T(std::log(config.split_scale_divisor));
            out.source.push_back(-1);
        }
    }
    out.cloned = clones.size();
    out.split = splits.size();

    // Opacity cull.
    std::vector<std::size_t> keep;
    keep.reserve(out.cloud.size());
    for (std::size_t i = 0; i < out.cloud.size(); ++i)
        if (double(out.cloud.opacity(i)) >= config.min_opacity) keep.push_back(i);
    out.culled = out.cloud.size() - keep.size();
    if (out.culled > 0) {
        std::vector<std::int64_t> src;
        src.reserve(keep.size());
        for (const std::size_t i : keep) src.push_back(out.source[i]);
        out.cloud = out.cloud.select(keep);
        out.source = std::move(src);
    }
    return out;
}

} // namespace maskraster
