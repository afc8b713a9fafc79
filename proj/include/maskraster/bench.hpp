// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/oracle.hpp"
#include "maskraster/render.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace maskraster {

struct BenchConfig {
    std::size_t n = 10000;
    int width = 256;
    int height = 256;
    std::uint64_t seed = 0;
    int repeats = 3;
    unsigned workers = 0;
    bool run_naive = true;
};

struct StageTimes {
    double project = 0.0;
    double bin = 0.0;
    double raster = 0.0;
    [[nodiscard]] double total() const { return project + bin + raster; }
};

struct BenchResult {
    BenchConfig config;
    std::size_t visible = 0;          // splats surviving projection
    std::size_t tile_entries = 0;     // splat-tile pairs after binning
    StageTimes tiled;                 // median over repeats
    double naive_seconds = 0.0;       // one naive render, 0 when skipped
    double speedup = 0.0;             // naive / tiled total
    double max_abs_diff = 0.0;        // tiled vs naive, per channel
    [[nodiscard]] double renders_per_second() const { return tiled.total() > 0 ? 1.0 / tiled.total() : 0.0; }
    [[nodiscard]] double pixels_per_second() const {
        return renders_per_second() * double(config.width) * double(config.height);
    }
};

/// Reference scene for timing: `n` small anisotropic Gaussians in the unit ball, degree-3 SH,
/// viewed from distance 3.
inline GaussianCloud<double>
bench_cloud(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0xbe4c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    GaussianCloud<double> c;
    c.sh_degree = 3;
    c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3<double> p;
        do {
            p = Vec3<double>(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
        } while (p.norm() > 1.0);
        c.centers[i] = p;
        for (int k = 0; k < 3; ++k) c.log_scales[i][k] = std::log(0.005 + 0.03 * u(rng));
        c.rotations[i] = Vec4<double>(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
        c.opacity_logits[i] = inverse_sigmoid(0.1 + 0.8 * u(rng));
        auto sh = c.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = (u(rng) - 0.5) / sh_constants::c0;
        for (std::size_t k = 3; k < sh.size(); ++k) sh[k] = 0.05 * n01(rng);
    }
    return c;
}

inline Camera<double>
bench_camera(int width, int height) {
    return Camera<double>::look_at(Vec3<double>(0.0, -0.5, -3.0), Vec3<double>::Zero(), Vec3<double>(0, -1, 0), width,
                                   height, 1.0 * width);
}

/// Times projection, binning and rasterization of the tiled renderer (median of `repeats`)
/// against one render of the naive oracle on the same scene.
inline BenchResult
run_bench(const BenchConfig &cfg) {
    if (cfg.repeats < 1) throw InvalidParameter("bench repeats must be >= 1");
    using clock = std::chrono::steady_clock;
    const auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
    BenchResult res;
    res.config = cfg;
    const auto cloud = bench_cloud(cfg.n, cfg.seed);
    const auto cam = bench_camera(cfg.width, cfg.height);
    const Vec3<double> bg = Vec3<double>::Zero();
    RasterConfig rc;
    RenderOptions ro;
    ro.workers = cfg.workers;

    std::vector<StageTimes> runs;
    FrameBuffer<double> tiled;
    for (int r = 0; r < cfg.repeats; ++r) {
        StageTimes st;
        ProjectedView<double> view;
        view.width = cam.width;
        view.height = cam.height;
        view.cloud_size = cloud.size();
        auto t = clock::now();
        view.projection = project_all(cloud, cam, rc);
        st.project = since(t);
        t = clock::now();
        view.binning = bin_and_sort<double>(view.projection.splats, cam.width, cam.height, rc.tile_size);
        st.bin = since(t);
        t = clock::now();
        tiled = render_standard(view, bg, rc, ro);
        st.raster = since(t);
        runs.push_back(st);
        res.visible = view.projection.splats.size();
        res.tile_entries = view.binning.entries.size();
    }
    std::sort(runs.begin(), runs.end(), [](const StageTimes &a, const StageTimes &b) { return a.total() < b.total(); });
    res.tiled = runs[runs.size() / 2];

    if (cfg.run_naive) {
        const auto t = clock::now();
        const auto naive = naive_render(cloud, {}, cam, bg, rc);
        res.naive_seconds = since(t);
        res.speedup = res.naive_seconds / std::max(res.tiled.total(), 1e-12);
        for (std::size_t i = 0; i < naive.color.size(); ++i)
            res.max_abs_diff = std::max(res.max_abs_diff, std::abs(naive.color[i] - tiled.color[i]));
    }
    return res;
}

} // namespace maskraster
