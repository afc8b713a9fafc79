// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reference machinery for testing the optimized paths. Nothing in this header reuses the
// tiled projection or blending code.

#include "maskraster/backward.hpp"
#include "maskraster/gaussian.hpp"
#include "maskraster/mask.hpp"
#include "maskraster/projection.hpp"
#include "maskraster/render.hpp"
#include "maskraster/sh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace maskraster {

namespace oracle_detail {

struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void add(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    void add_double(double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof bits);
        add(bits);
    }
};

struct NaiveSplat {
    std::size_t index;
    double depth;
    double mx, my;
    double ia, ib, ic; // inverse 2D covariance
    double opacity;
    Vec3<double> color;
    unsigned clamped;
};

inline std::vector<NaiveSplat>
naive_project(const GaussianCloud<double> &cloud, const Camera<double> &camera, const RasterConfig &config) {
    std::vector<NaiveSplat> out;
    const Vec3<double> eye = -camera.rotation.transpose() * camera.translation;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3<double> t = camera.rotation * cloud.centers[i] + camera.translation;
        if (!(t[2] > camera.near_clip)) continue;
        const double opacity = 1.0 / (1.0 + std::exp(-cloud.opacity_logits[i]));
        if (opacity < config.alpha_min) continue;

        const Vec4<double> &q = cloud.rotations[i];
        const Mat3<double> r = quaternion_to_rotation(q);
        Mat3<double> sd = Mat3<double>::Zero();
        for (int k = 0; k < 3; ++k) sd(k, k) = std::exp(2.0 * cloud.log_scales[i][k]);
        const Mat3<double> world_cov = r * sd * r.transpose();
        const Mat3<double> cam_cov = camera.rotation * world_cov * camera.rotation.transpose();
        const double z = t[2];
        Eigen::Matrix<double, 2, 3> j;
        j << camera.fx / z, 0.0, -camera.fx * t[0] / (z * z), 0.0, camera.fy / z, -camera.fy * t[1] / (z * z);
        Mat2<double> cov = j * cam_cov * j.transpose();
        const double off = 0.5 * (cov(0, 1) + cov(1, 0));
        const double a = cov(0, 0) + config.cov2d_floor;
        const double c = cov(1, 1) + config.cov2d_floor;
        const double det = a * c - off * off;
        if (!(det > 0.0)) continue;

        NaiveSplat s{};
        s.index = i;
        s.depth = z;
        s.mx = camera.fx * t[0] / z + camera.cx;
        s.my = camera.fy * t[1] / z + camera.cy;
        s.ia = c / det;
        s.ib = -off / det;
        s.ic = a / det;
        s.opacity = opacity;

        const auto coeffs = cloud.sh_of(i);
        Vec3<double> dir = cloud.centers[i] - eye;
        const double len = dir.norm();
        dir = len > 0.0 ? Vec3<double>(dir / len) : Vec3<double>(0, 0, 1);
        const auto basis = sh_basis(dir, cloud.sh_degree);
        for (int ch = 0; ch < 3; ++ch) {
            double v = 0.5;
            for (int k = 0; k < cloud.coeffs_per_channel(); ++k) v += basis[k] * coeffs[3 * k + ch];
            if (v < 0.0) {
                v = 0.0;
                s.clamped |= 1u << ch;
            }
            s.color[ch] = v;
        }
        out.push_back(s);
    }
    std::sort(out.begin(), out.end(), [](const NaiveSplat &l, const NaiveSplat &r) {
        return l.depth != r.depth ? l.depth < r.depth : l.index < r.index;
    });
    return out;
}

} // namespace oracle_detail

/// Literal per-pixel evaluation of the masked compositing sum at float64: every projected
/// Gaussian is visited at every pixel in depth order, with no tiles, early stop or contributor
/// cap. Masks may be fractional; an empty span means all ones.
///
/// When `signature` is non-null it receives a hash of every discrete decision taken (depth
/// order, cutoff and α-clamp outcomes per pixel, color clamps). Two evaluations with equal
/// signatures lie on the same smooth branch of the forward.
inline FrameBuffer<double>
naive_render(const GaussianCloud<double> &cloud, std::span<const double> masks, const Camera<double> &camera,
             const Vec3<double> &background, const RasterConfig &config = {},
             MaskApplication application = MaskApplication::rasterization, std::uint64_t *signature = nullptr) {
    if (!masks.empty() && masks.size() != cloud.size()) throw InvalidParameter("mask length mismatch");
    const auto splats = oracle_detail::naive_project(cloud, camera, config);
    oracle_detail::Fnv1a sig;
    for (const auto &s : splats) {
        sig.add(s.index);
        sig.add(s.clamped);
    }

    FrameBuffer<double> fb;
    fb.width = camera.width;
    fb.height = camera.height;
    const std::size_t npix = std::size_t(camera.width) * camera.height;
    fb.color.assign(3 * npix, 0.0);
    fb.final_transmittance.assign(npix, 1.0);
    fb.n_contrib.assign(npix, 0);

    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) {
            const std::size_t p = std::size_t(y) * camera.width + x;
            double trans = 1.0;
            double r = 0.0, g = 0.0, b = 0.0;
            std::uint32_t count = 0;
            for (const auto &s : splats) {
                const double dx = double(x) - s.mx;
                const double dy = double(y) - s.my;
                const double quad = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
                if (quad < 0.0) {
                    sig.add(p ^ (s.index << 32) ^ 0x1);
                    continue;
                }
                const double m = masks.empty() ? 1.0 : masks[s.index];
                double density = s.opacity * std::exp(-0.5 * quad);
                double weight = m;
                if (application == MaskApplication::opacity) {
                    density *= m;
                    weight = 1.0;
                }
                const bool clamped = density > config.alpha_max;
                const double alpha = clamped ? config.alpha_max : density;
                if (!(alpha >= config.alpha_min)) {
                    sig.add(p ^ (s.index << 32) ^ 0x2);
                    continue;
                }
                if (clamped) sig.add(p ^ (s.index << 32) ^ 0x3);
                ++count;
                const double w = weight * alpha * trans;
                r += w * s.color[0];
                g += w * s.color[1];
                b += w * s.color[2];
                trans *= 1.0 - weight * alpha;
            }
            fb.color[3 * p + 0] = r + trans * background[0];
            fb.color[3 * p + 1] = g + trans * background[1];
            fb.color[3 * p + 2] = b + trans * background[2];
            fb.final_transmittance[p] = trans;
            fb.n_contrib[p] = count;
        }
    }
    if (signature) *signature = sig.h;
    return fb;
}

/// One numerically differentiated entry.
struct FdEntry {
    double value = 0.0;
    bool flagged = false; // non-finite evaluation or the probe left the smooth branch
};

/// Loss evaluation used by finite_diff: value plus the branch signature of the forward.
struct Probe {
    double loss = 0.0;
    std::uint64_t signature = 0;
};

inline double
fd_step(double x, double h = 1e-5) {
    return h * std::max(1.0, std::abs(x));
}

/// Central difference of `eval` around the current value of `param`, which is restored on exit.
/// The entry is flagged if either probe is non-finite or changes the branch signature.
template <class Eval>
FdEntry
finite_diff(double &param, double h, Eval &&eval) {
    if (!(h > 0.0)) throw InvalidParameter("finite difference step must be > 0");
    const double x = param;
    const Probe base = eval();
    param = x + h;
    const Probe up = eval();
    param = x - h;
    const Probe down = eval();
    param = x;
    FdEntry e;
    e.value = (up.loss - down.loss) / (2.0 * h);
    e.flagged = !std::isfinite(e.value) || up.signature != base.signature || down.signature != base.signature;
    return e;
}

/// One-sided difference stepping into the feasible side (direction = +1 or -1).
template <class Eval>
FdEntry
one_sided_diff(double &param, double h, int direction, Eval &&eval) {
    if (!(h > 0.0)) throw InvalidParameter("finite difference step must be > 0");
    if (direction != 1 && direction != -1) throw InvalidParameter("direction must be +1 or -1");
    const double x = param;
    const Probe base = eval();
    param = x + direction * h;
    const Probe moved = eval();
    param = x;
    FdEntry e;
    e.value = (moved.loss - base.loss) / (direction * h);
    e.flagged = !std::isfinite(e.value) || moved.signature != base.signature;
    return e;
}

/// Plain central difference of a scalar function.
template <class F>
double
central_difference(F &&f, double x, double h) {
    if (!(h > 0.0)) throw InvalidParameter("finite difference step must be > 0");
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// |a − n| / max(|a|, |n|, floor).
inline double
relative_error(double analytic, double numeric, double floor = 1e-4) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

enum class ParamClass { centers, opacity_logits, log_scales, rotations, sh, mask_soft };
inline constexpr std::array<ParamClass, 6> kAllParamClasses = {ParamClass::centers,  ParamClass::opacity_logits,
                                                               ParamClass::log_scales, ParamClass::rotations,
                                                               ParamClass::sh,       ParamClass::mask_soft};

inline std::string_view
to_string(ParamClass c) {
    switch (c) {
    case ParamClass::centers: return "centers";
    case ParamClass::opacity_logits: return "opacity_logits";
    case ParamClass::log_scales: return "log_scales";
    case ParamClass::rotations: return "rotations";
    case ParamClass::sh: return "sh";
    case ParamClass::mask_soft: return "mask_soft";
    }
    return "?";
}

/// Small random scene used by the gradient checks.
struct GradCheckScene {
    GaussianCloud<double> cloud;
    std::vector<double> masks;
    Camera<double> camera;
    Vec3<double> background = Vec3<double>::Zero();
    std::vector<double> target; // H × W × 3
    std::uint64_t descriptor_hash = 0;
};

struct GradCheckOptions {
    int max_gaussians = 64;
    int width = 32;
    int height = 32;
    int sh_degree = 3;
    double max_opacity = 0.9; // keeps α below the clamp
    double h = 1e-5;
    double error_floor = 1e-4;
    /// Fractional mask levels for the interior check; binary entries use one-sided differences.
    std::vector<double> mask_levels = {0.25, 0.5, 0.75, 0.0, 1.0};
    MaskApplication application = MaskApplication::rasterization;
};

inline GradCheckScene
make_gradcheck_scene(std::uint64_t seed, const GradCheckOptions &opt = {}) {
    std::mt19937_64 rng(mix_seed(seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    GradCheckScene sc;
    sc.camera = Camera<double>::look_at({0.3, -0.2, -4.0}, {0, 0, 0}, {0, -1, 0}, opt.width, opt.height,
                                        0.9 * opt.width);
    const int n = 1 + int(rng() % std::uint64_t(std::max(1, opt.max_gaussians)));
    auto &c = sc.cloud;
    c.sh_degree = opt.sh_degree;
    c.resize(std::size_t(n));
    const double c0 = sh_constants::c0;
    for (int i = 0; i < n; ++i) {
        c.centers[i] = Vec3<double>(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
        const double o = 0.1 + (opt.max_opacity - 0.1) * u(rng);
        c.opacity_logits[i] = inverse_sigmoid(o);
        for (int k = 0; k < 3; ++k) c.log_scales[i][k] = std::log(0.06 + 0.25 * u(rng));
        c.rotations[i] = Vec4<double>(n01(rng), n01(rng), n01(rng), n01(rng));
        auto sh = c.sh_of(std::size_t(i));
        for (int ch = 0; ch < 3; ++ch) sh[ch] = (0.15 + 0.7 * u(rng) - 0.5) / c0;
        for (std::size_t k = 3; k < sh.size(); ++k) sh[k] = 0.08 * n01(rng);
    }
    sc.masks.resize(std::size_t(n));
    for (auto &m : sc.masks) m = opt.mask_levels[rng() % opt.mask_levels.size()];
    sc.background = Vec3<double>(u(rng), u(rng), u(rng));
    sc.target.resize(std::size_t(opt.width) * opt.height * 3);
    for (auto &t : sc.target) t = u(rng);

    oracle_detail::Fnv1a h;
    h.add(seed);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) h.add_double(c.centers[i][k]);
        for (int k = 0; k < 3; ++k) h.add_double(c.log_scales[i][k]);
        for (int k = 0; k < 4; ++k) h.add_double(c.rotations[i][k]);
        h.add_double(c.opacity_logits[i]);
        h.add_double(sc.masks[i]);
    }
    for (const double v : c.sh) h.add_double(v);
    sc.descriptor_hash = h.h;
    return sc;
}

/// ½·Σ (C − target)² over the naive render, and its signature.
inline Probe
gradcheck_loss(const GradCheckScene &sc, const RasterConfig &config, MaskApplication application) {
    Probe p;
    const auto fb = naive_render(sc.cloud, sc.masks, sc.camera, sc.background, config, application, &p.signature);
    double acc = 0.0;
    for (std::size_t i = 0; i < fb.color.size(); ++i) {
        const double d = fb.color[i] - sc.target[i];
        acc += 0.5 * d * d;
    }
    p.loss = acc;
    return p;
}

namespace oracle_detail {

struct ImageProbe {
    std::vector<double> color;
    std::uint64_t signature = 0;
};

// L(up) − L(down) for the half squared error, accumulated per pixel as
// (C⁺ − C⁻)·(½(C⁺ + C⁻) − target) so the large common part of the loss cancels exactly.
inline double
loss_difference(const ImageProbe &up, const ImageProbe &down, const std::vector<double> &target) {
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        acc += (up.color[i] - down.color[i]) * (0.5 * (up.color[i] + down.color[i]) - target[i]);
    }
    return acc;
}

} // namespace oracle_detail

/// Analytic gradients of gradcheck_loss through the tiled forward and backward.
inline GradientSet<double>
gradcheck_analytic(const GradCheckScene &sc, const RasterConfig &config, MaskApplication application) {
    const auto view = prepare_view(sc.cloud, sc.camera, config);
    RenderOptions ro;
    ro.gradient_mode = true;
    ro.application = application;
    ro.workers = 1;
    const auto fb = render_masked(view, std::span<const double>(sc.masks), sc.background, config, ro);
    std::vector<double> d_image(fb.color.size());
    for (std::size_t i = 0; i < d_image.size(); ++i) d_image[i] = fb.color[i] - sc.target[i];
    BackwardOptions bo;
    bo.application = application;
    bo.workers = 1;
    return backward_view(sc.cloud, sc.camera, view, fb, std::span<const double>(sc.masks),
                         std::span<const double>(d_image), sc.background, config, bo);
}

struct ClassReport {
    ParamClass cls = ParamClass::centers;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // flagged by the branch signature
    double tolerance = 1e-4;
    bool pass = true;
};

struct WorstOffender {
    ParamClass cls = ParamClass::centers;
    std::size_t scene = 0;
    std::size_t gaussian = 0;
    int component = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::uint64_t seed = 0;
    std::size_t n_scenes = 0;
    std::uint64_t scene_hash = 0; // combined descriptor hash of all scenes
    std::array<ClassReport, 6> classes{};
    WorstOffender worst;
    std::vector<std::string> warnings;
    bool pass = true;

    [[nodiscard]] const ClassReport &of(ParamClass c) const { return classes[std::size_t(c)]; }
};

struct GradCheckTolerances {
    double centers = 1e-4;
    double opacity_logits = 1e-4;
    double log_scales = 1e-4;
    double rotations = 1e-4;
    double sh = 1e-4;
    double mask_soft = 1e-4;

    [[nodiscard]] double of(ParamClass c) const {
        const std::array<double, 6> t = {centers, opacity_logits, log_scales, rotations, sh, mask_soft};
        return t[std::size_t(c)];
    }
};

/// Compares analytic gradients with finite differences of the naive forward on `n_scenes`
/// random scenes. `mutate`, when set, is applied to the analytic gradients before comparison
/// (used to confirm the harness catches a broken backward).
inline GradCheckReport
gradcheck_suite(std::uint64_t seed, std::size_t n_scenes, const GradCheckTolerances &tol = {},
                const GradCheckOptions &opt = {}, const std::function<void(GradientSet<double> &)> &mutate = {},
                const std::vector<ParamClass> &only = {}) {
    GradCheckReport rep;
    rep.seed = seed;
    rep.n_scenes = n_scenes;
    for (const ParamClass c : kAllParamClasses) {
        rep.classes[std::size_t(c)].cls = c;
        rep.classes[std::size_t(c)].tolerance = tol.of(c);
    }
    if (n_scenes == 0) rep.warnings.push_back("no scenes requested; report is empty");

    RasterConfig config;
    config.early_stop = false;
    std::array<double, 6> sums{};
    oracle_detail::Fnv1a combined;
    auto wanted = [&](ParamClass c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    for (std::size_t s = 0; s < n_scenes; ++s) {
        GradCheckScene sc = make_gradcheck_scene(mix_seed(seed, s), opt);
        combined.add(sc.descriptor_hash);
        GradientSet<double> g = gradcheck_analytic(sc, config, opt.application);
        if (mutate) mutate(g);
        auto render = [&] {
            oracle_detail::ImageProbe p;
            p.color = naive_render(sc.cloud, sc.masks, sc.camera, sc.background, config, opt.application,
                                   &p.signature)
                          .color;
            return p;
        };
        const oracle_detail::ImageProbe base = render();
        // Central difference (direction 0), or the second-order one-sided difference
        // (−3f(x) + 4f(x + h) − f(x + 2h)) / 2h stepping into the feasible side (direction ±1).
        auto diff = [&](double &param, double h, int direction) {
            const double x = param;
            FdEntry e;
            if (direction == 0) {
                param = x + h;
                const auto up = render();
                param = x - h;
                const auto down = render();
                e.value = oracle_detail::loss_difference(up, down, sc.target) / (2.0 * h);
                e.flagged = up.signature != base.signature || down.signature != base.signature;
            } else {
                param = x + direction * h;
                const auto one = render();
                param = x + 2 * direction * h;
                const auto two = render();
                const double d1 = oracle_detail::loss_difference(one, base, sc.target);
                const double d2 = oracle_detail::loss_difference(two, base, sc.target);
                e.value = (4.0 * d1 - d2) / (2.0 * direction * h);
                e.flagged = one.signature != base.signature || two.signature != base.signature;
            }
            param = x;
            e.flagged = e.flagged || !std::isfinite(e.value);
            return e;
        };

        auto record = [&](ParamClass c, std::size_t i, int comp, double analytic, const FdEntry &e) {
            ClassReport &cr = rep.classes[std::size_t(c)];
            if (e.flagged) {
                ++cr.skipped;
                return;
            }
            const double err = relative_error(analytic, e.value, opt.error_floor);
            ++cr.checked;
            sums[std::size_t(c)] += err;
            cr.max_rel_error = std::max(cr.max_rel_error, err);
            if (err > rep.worst.rel_error) rep.worst = {c, s, i, comp, analytic, e.value, err};
        };

        const std::size_t n = sc.cloud.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (wanted(ParamClass::centers))
                for (int k = 0; k < 3; ++k) {
                    double &x = sc.cloud.centers[i][k];
                    record(ParamClass::centers, i, k, g.d_centers[i][k], diff(x, fd_step(x, opt.h), 0));
                }
            if (wanted(ParamClass::opacity_logits)) {
                double &x = sc.cloud.opacity_logits[i];
                record(ParamClass::opacity_logits, i, 0, g.d_opacity_logits[i],
                       diff(x, fd_step(x, opt.h), 0));
            }
            if (wanted(ParamClass::log_scales))
                for (int k = 0; k < 3; ++k) {
                    double &x = sc.cloud.log_scales[i][k];
                    record(ParamClass::log_scales, i, k, g.d_log_scales[i][k],
                           diff(x, fd_step(x, opt.h), 0));
                }
            if (wanted(ParamClass::rotations))
                for (int k = 0; k < 4; ++k) {
                    double &x = sc.cloud.rotations[i][k];
                    record(ParamClass::rotations, i, k, g.d_rotations[i][k], diff(x, fd_step(x, opt.h), 0));
                }
            if (wanted(ParamClass::sh)) {
                auto coeffs = sc.cloud.sh_of(i);
                for (std::size_t k = 0; k < coeffs.size(); ++k) {
                    double &x = coeffs[k];
                    record(ParamClass::sh, i, int(k), g.d_sh[i * sc.cloud.sh_stride() + k],
                           diff(x, fd_step(x, opt.h), 0));
                }
            }
            if (wanted(ParamClass::mask_soft)) {
                double &m = sc.masks[i];
                FdEntry e;
                if (m <= 0.0) e = diff(m, opt.h, +1);
                else if (m >= 1.0) e = diff(m, opt.h, -1);
                else e = diff(m, opt.h, 0);
                record(ParamClass::mask_soft, i, 0, g.d_mask_soft[i], e);
            }
        }
    }

    for (ClassReport &cr : rep.classes) {
        if (cr.checked > 0) cr.mean_rel_error = sums[std::size_t(cr.cls)] / double(cr.checked);
        cr.pass = cr.max_rel_error < cr.tolerance;
        rep.pass = rep.pass && cr.pass;
    }
    rep.scene_hash = combined.h;
    return rep;
}

/// Empirical present-frequency of Gumbel-argmax draws against the existence probability.
struct SamplerStats {
    std::vector<double> probability;
    std::vector<double> frequency;
    std::vector<double> z_score; // (freq − p) / √(p(1 − p)/draws); ±inf if p ∈ {0, 1} and freq ≠ p
    std::size_t draws = 0;
    std::uint64_t seed = 0;
    bool pass = true; // all |z| < 4
};

inline SamplerStats
sampler_stats(std::span<const std::array<double, 2>> logits, double temperature, std::size_t draws,
              std::uint64_t seed) {
    if (draws < 1000) throw InvalidParameter("sampler_stats needs at least 1000 draws");
    SamplerStats st;
    st.draws = draws;
    st.seed = seed;
    st.probability = existence_prob(logits);
    std::vector<std::size_t> hits(logits.size(), 0);
    std::mt19937_64 rng(mix_seed(seed));
    for (std::size_t d = 0; d < draws; ++d) {
        const MaskSample<double> s = sample_masks(logits, temperature, rng);
        for (std::size_t i = 0; i < s.size(); ++i) hits[i] += s.hard[i] != 0.0;
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = st.probability[i];
        const double f = double(hits[i]) / double(draws);
        const double var = p * (1.0 - p) / double(draws);
        double z;
        if (var > 0.0) z = (f - p) / std::sqrt(var);
        else z = f == p ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), f - p);
        st.frequency.push_back(f);
        st.z_score.push_back(z);
        st.pass = st.pass && std::abs(z) < 4.0;
    }
    return st;
}

} // namespace maskraster
