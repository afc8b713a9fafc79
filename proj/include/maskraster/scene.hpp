// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/gaussian.hpp"
#include "maskraster/image.hpp"
#include "maskraster/mask.hpp"
#include "maskraster/oracle.hpp"
#include "maskraster/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace maskraster {

struct SyntheticSceneConfig {
    std::uint64_t seed = 0;
    int n_gaussians = 128;
    int n_cameras = 12;
    int width = 64;
    int height = 64;
    int sh_degree = 1;
    double camera_distance = 4.0;
    double focal_factor = 1.1; // focal length in units of image width
    Vec3<double> background = Vec3<double>::Ones();

    void validate() const {
        if (n_gaussians < 1) throw InvalidParameter("synthetic scene needs n_gaussians >= 1");
        if (n_cameras < 2) throw InvalidParameter("synthetic scene needs n_cameras >= 2");
        if (width < 1 || height < 1) throw InvalidParameter("synthetic scene needs a positive image size");
        if (sh_degree < 0 || sh_degree > 3) throw InvalidParameter("sh_degree must be in [0, 3]");
    }
};

struct SyntheticScene {
    GaussianCloud<double> truth;
    std::vector<Camera<double>> cameras;
    std::vector<Image<double>> targets;
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
    Vec3<double> background = Vec3<double>::Ones();
};

/// Held-out views: max(1, min(2, n/4)) cameras spread evenly over the index range.
inline std::vector<std::size_t>
eval_view_indices(std::size_t n_cameras) {
    const std::size_t n_eval = std::max<std::size_t>(1, std::min<std::size_t>(2, n_cameras / 4));
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n_eval; ++j) {
        out.push_back(std::size_t(std::floor((double(j) + 0.5) * double(n_cameras) / double(n_eval))));
    }
    return out;
}

inline void
split_views(std::size_t n_cameras, std::vector<std::size_t> &train, std::vector<std::size_t> &eval) {
    eval = eval_view_indices(n_cameras);
    train.clear();
    for (std::size_t i = 0; i < n_cameras; ++i)
        if (std::find(eval.begin(), eval.end(), i) == eval.end()) train.push_back(i);
}

/// Cameras on two staggered rings around the origin, all looking at the origin.
inline std::vector<Camera<double>>
ring_cameras(int n, int width, int height, double distance, double focal_factor) {
    std::vector<Camera<double>> cams;
    for (int k = 0; k < n; ++k) {
        const double azimuth = 2.0 * std::numbers::pi * double(k) / double(n);
        const double elevation = (k % 2 == 0) ? 0.35 : -0.15;
        const Vec3<double> eye(distance * std::cos(elevation) * std::cos(azimuth),
                               distance * std::cos(elevation) * std::sin(azimuth), distance * std::sin(elevation));
        cams.push_back(Camera<double>::look_at(eye, Vec3<double>::Zero(), Vec3<double>(0, 0, -1), width, height,
                                               focal_factor * width));
    }
    return cams;
}

/// 1.1 × the largest camera distance from the camera centroid.
template <std::floating_point T>
double
scene_extent(const std::vector<Camera<T>> &cameras) {
    if (cameras.empty()) return 1.0;
    Vec3<double> mean = Vec3<double>::Zero();
    for (const auto &c : cameras) mean += c.position().template cast<double>();
    mean /= double(cameras.size());
    double r = 0.0;
    for (const auto &c : cameras) r = std::max(r, (c.position().template cast<double>() - mean).norm());
    return 1.1 * std::max(r, 1e-6);
}

inline Image<double>
to_image(const FrameBuffer<double> &fb) {
    return {fb.width, fb.height, fb.color};
}

/// Deterministic procedural scene; ground-truth images come from the naive float64 renderer.
inline SyntheticScene
generate_synthetic_scene(const SyntheticSceneConfig &cfg) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5ce7e));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    SyntheticScene sc;
    sc.background = cfg.background;
    auto &c = sc.truth;
    c.sh_degree = cfg.sh_degree;
    c.resize(std::size_t(cfg.n_gaussians));
    for (int i = 0; i < cfg.n_gaussians; ++i) {
        Vec3<double> p;
        do {
            p = Vec3<double>(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
        } while (p.norm() > 1.0);
        c.centers[i] = p;
        for (int k = 0; k < 3; ++k) c.log_scales[i][k] = std::log(0.04 + 0.16 * u(rng));
        c.rotations[i] = Vec4<double>(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
        c.opacity_logits[i] = inverse_sigmoid(0.5 + 0.45 * u(rng));
        auto sh = c.sh_of(std::size_t(i));
        for (int ch = 0; ch < 3; ++ch) sh[ch] = (0.05 + 0.9 * u(rng) - 0.5) / sh_constants::c0;
        for (std::size_t k = 3; k < sh.size(); ++k) sh[k] = 0.1 * n01(rng);
    }
    sc.cameras = ring_cameras(cfg.n_cameras, cfg.width, cfg.height, cfg.camera_distance, cfg.focal_factor);
    RasterConfig rc;
    rc.early_stop = false;
    for (const auto &cam : sc.cameras) sc.targets.push_back(to_image(naive_render(c, {}, cam, sc.background, rc)));
    split_views(sc.cameras.size(), sc.train, sc.eval);
    return sc;
}

/// Random starting cloud for re-fitting: `count` Gaussians spread uniformly over the
/// bounding box of `reference` centers, isotropic scale from the mean spacing, low opacity.
template <std::floating_point T>
GaussianCloud<T>
random_init(const GaussianCloud<double> &reference, std::size_t count, int sh_degree, std::uint64_t seed,
            const std::array<double, 2> &mask_init = {3.0, 0.0}) {
    if (count == 0) throw InvalidParameter("random_init needs count >= 1");
    std::mt19937_64 rng(mix_seed(seed, 0x1417));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec3<double> lo = Vec3<double>::Constant(-1.0), hi = Vec3<double>::Constant(1.0);
    if (!reference.empty()) {
        lo = hi = reference.centers[0];
        for (const auto &p : reference.centers) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    }
    const Vec3<double> span = (hi - lo).cwiseMax(1e-3);
    const double spacing = std::cbrt(span.prod() / double(count));
    GaussianCloud<T> c;
    c.sh_degree = sh_degree;
    c.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) c.centers[i][k] = T(lo[k] + span[k] * u(rng));
        c.log_scales[i] = Vec3<T>::Constant(T(std::log(spacing)));
        c.opacity_logits[i] = T(inverse_sigmoid(0.1));
        auto sh = c.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = T((u(rng) - 0.5) / sh_constants::c0);
        c.mask_logits[i] = {T(mask_init[0]), T(mask_init[1])};
    }
    return c;
}

template <std::floating_point T>
TrainingViews<T>
training_views(const SyntheticScene &scene) {
    TrainingViews<T> v;
    for (const auto &c : scene.cameras) v.cameras.push_back(c.template cast<T>());
    for (const auto &t : scene.targets) v.targets.push_back(t.template cast<T>());
    v.train = scene.train;
    v.eval = scene.eval;
    v.extent = scene_extent(scene.cameras);
    return v;
}

/// Training defaults for re-fitting the synthetic scene on a desktop CPU: 5000 iterations,
/// constant λ_m = 0.0005, white background, and no clone/split densification (the
/// over-provisioned random start already supplies the redundancy masks are meant to remove).
inline TrainConfig
desk_train_config(int iterations = 5000, double lambda = 0.0005) {
    TrainConfig c;
    c.iterations = iterations;
    c.lambda_schedule = LambdaSchedule::constant(lambda, iterations);
    c.densify.enabled = false;
    c.background = Vec3<double>::Ones();
    return c;
}

} // namespace maskraster
