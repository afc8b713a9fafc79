// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/adam.hpp"
#include "maskraster/backward.hpp"
#include "maskraster/densify.hpp"
#include "maskraster/image.hpp"
#include "maskraster/mask.hpp"
#include "maskraster/render.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskraster {

/// λ_m applies on iterations [start, end) (0-based).
struct LambdaWindow {
    int start = 0;
    int end = 0;
    double lambda = 0.0;
};

struct LambdaSchedule {
    std::vector<LambdaWindow> windows;

    [[nodiscard]] double at(int iteration) const {
        for (const auto &w : windows)
            if (iteration >= w.start && iteration < w.end) return w.lambda;
        return 0.0;
    }

    void validate() const {
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const auto &w = windows[i];
            if (!(w.start < w.end)) throw InvalidParameter("lambda window needs start < end");
            if (!(w.lambda >= 0.0)) throw InvalidParameter("lambda must be >= 0");
            for (std::size_t j = 0; j < i; ++j) {
                const auto &o = windows[j];
                if (w.start < o.end && o.start < w.end) throw InvalidParameter("lambda windows overlap");
            }
        }
    }

    static LambdaSchedule constant(double lambda, int iterations) { return {{{0, iterations, lambda}}}; }
};

/// Named λ_m schedules: ours-alpha (0.1 on [19000, 20000)), ours-beta (0.0005 on [0, 30000)),
/// ours-gamma (0.001 on [0, 30000)).
inline LambdaSchedule
preset_schedule(std::string_view name) {
    if (name == "ours-alpha") return {{{19000, 20000, 0.1}}};
    if (name == "ours-beta") return {{{0, 30000, 0.0005}}};
    if (name == "ours-gamma") return {{{0, 30000, 0.001}}};
    throw InvalidParameter("unknown preset '" + std::string(name) + "'");
}

struct TrainConfig {
    int iterations = 30000;
    LambdaSchedule lambda_schedule = preset_schedule("ours-beta");
    double ssim_weight = 0.2;
    LearningRates lr;
    DensifyConfig densify;
    int prune_interval_after_densify = 1000;
    int eval_interval = 500;
    std::uint64_t seed = 0;
    bool use_masks = true; // false: the plain pipeline, no mask sampling or mask loss
    MaskConfig mask;
    RasterConfig raster;
    Vec3<double> background = Vec3<double>::Zero();
    Accumulation accumulation = Accumulation::deterministic;
    unsigned workers = 0;

    void validate() const {
        if (iterations < 0) throw InvalidParameter("iterations must be >= 0");
        if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) throw InvalidParameter("ssim_weight must be in [0, 1]");
        if (prune_interval_after_densify < 1) throw InvalidParameter("prune_interval_after_densify must be >= 1");
        if (eval_interval < 1) throw InvalidParameter("eval_interval must be >= 1");
        lambda_schedule.validate();
        densify.validate();
        mask.validate();
        raster.validate();
    }

    /// Whether masks are sampled from logits and subject to pruning.
    [[nodiscard]] bool learns_masks() const { return use_masks && mask.mode != MaskMode::all_on; }
};

/// Cameras, targets and the train/eval split.
template <std::floating_point T> struct TrainingViews {
    std::vector<Camera<T>> cameras;
    std::vector<Image<T>> targets;
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
    double extent = 1.0;

    void validate() const {
        if (cameras.size() != targets.size()) throw InvalidParameter("one target image per camera required");
        if (train.empty()) throw InvalidParameter("at least one training view required");
        for (const std::size_t i : train)
            if (i >= cameras.size()) throw InvalidParameter("train index out of range");
        for (const std::size_t i : eval)
            if (i >= cameras.size()) throw InvalidParameter("eval index out of range");
        for (std::size_t i = 0; i < cameras.size(); ++i) {
            cameras[i].validate();
            if (targets[i].width != cameras[i].width || targets[i].height != cameras[i].height)
                throw InvalidParameter("target " + std::to_string(i) + " does not match its camera size");
        }
    }
};

struct EvalPoint {
    int iteration = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t gaussian_count = 0; // stored Gaussians
    std::size_t active_count = 0;   // Gaussians present under the most probable mask
    double wall_seconds = 0.0;
};

struct CountEvent {
    enum class Kind { densify, prune, compact } kind = Kind::prune;
    int iteration = 0;
    std::size_t before = 0;
    std::size_t after = 0;
};

inline std::string_view
to_string(CountEvent::Kind k) {
    switch (k) {
    case CountEvent::Kind::densify: return "densify";
    case CountEvent::Kind::prune: return "prune";
    case CountEvent::Kind::compact: return "compact";
    }
    return "?";
}

struct TrainReport {
    std::vector<EvalPoint> evals;
    std::vector<double> losses; // total loss per iteration
    std::vector<CountEvent> events;
    std::size_t overflow_pixels = 0;
    std::size_t guard_events = 0;
    double wall_seconds = 0.0;

    [[nodiscard]] const EvalPoint &final_eval() const {
        if (evals.empty()) throw std::logic_error("no evaluation recorded");
        return evals.back();
    }
};

template <std::floating_point T> struct TrainResult {
    GaussianCloud<T> cloud;
    std::vector<std::int64_t> origin; // input index of each output Gaussian, -1 if created by densify
    TrainReport report;
    AdamState optimizer;
};

/// Thrown when the loss or a gradient becomes non-finite; carries the parameters from before
/// the failing iteration.
template <std::floating_point T> class TrainingAborted : public std::runtime_error {
  public:
    TrainingAborted(const std::string &what, int iteration, GaussianCloud<T> last_good)
        : std::runtime_error(what), iteration(iteration), last_good(std::move(last_good)) {}
    int iteration;
    GaussianCloud<T> last_good;
};

/// Mean PSNR / SSIM over the eval views, rendered with the most probable masks.
template <std::floating_point T>
EvalPoint
evaluate(const GaussianCloud<T> &cloud, const TrainingViews<T> &views, const TrainConfig &cfg, int iteration) {
    EvalPoint e;
    e.iteration = iteration;
    e.gaussian_count = cloud.size();
    const Vec3<T> bg = cfg.background.template cast<T>();
    MaskSample<T> masks;
    if (cfg.use_masks) {
        masks = mode_masks<T>(cloud.mask_logits);
        e.active_count = masks.count_on();
    } else {
        e.active_count = cloud.size();
    }
    const std::vector<std::size_t> &ids = views.eval.empty() ? views.train : views.eval;
    RenderOptions ro;
    ro.workers = cfg.workers;
    for (const std::size_t v : ids) {
        const auto pv = prepare_view(cloud, views.cameras[v], cfg.raster);
        const auto fb = cfg.use_masks ? render_masked(pv, std::span<const T>(masks.hard), bg, cfg.raster, ro)
                                      : render_standard(pv, bg, cfg.raster, ro);
        const Image<T> img{fb.width, fb.height, fb.color};
        e.psnr += psnr(img, views.targets[v]);
        e.ssim += ssim(img, views.targets[v]);
    }
    e.psnr /= double(ids.size());
    e.ssim /= double(ids.size());
    return e;
}

/// Optimizes `cloud` against the training views.
///
/// Per iteration: pick a view, sample masks, render, (1 − w)·L1 + w·(1 − SSIM) + λ_m·L_m,
/// backward, Adam. Densification runs on its schedule; pruning of never-sampled Gaussians runs
/// at every densify event and every prune_interval_after_densify iterations afterwards. At the
/// end, Gaussians whose existence probability is below 0.5 are removed.
template <std::floating_point T>
TrainResult<T>
run_training(GaussianCloud<T> cloud, const TrainingViews<T> &views, const TrainConfig &cfg,
             const std::function<void(const EvalPoint &)> &on_eval = {}) {
    cfg.validate();
    views.validate();
    cloud.validate();
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto seconds = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

    TrainResult<T> res;
    AdamState adam(cloud);
    LearningRates lr = cfg.lr;
    if (lr.position_decay_steps == 0) lr.position_decay_steps = std::uint64_t(std::max(1, cfg.iterations));
    std::mt19937_64 view_rng(mix_seed(cfg.seed, 1));
    // mask.seed = 0 keeps the mask streams on the run seed.
    const std::uint64_t mask_seed = cfg.mask.seed == 0 ? cfg.seed : mix_seed(cfg.seed, cfg.mask.seed);
    std::mt19937_64 mask_rng(mix_seed(mask_seed, 2));
    std::mt19937_64 densify_rng(mix_seed(cfg.seed, 3));
    const Vec3<T> bg = cfg.background.template cast<T>();
    DensifyStats stats;
    stats.reset(cloud.size());
    std::vector<std::size_t> stack;
    std::vector<std::int64_t> origin(cloud.size());
    for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = std::int64_t(i);
    const auto follow = [&](const auto &src) {
        std::vector<std::int64_t> o;
        o.reserve(src.size());
        for (const auto s : src) o.push_back(std::int64_t(s) < 0 ? -1 : origin[std::size_t(s)]);
        origin = std::move(o);
    };

    RenderOptions ro;
    ro.gradient_mode = true;
    ro.application = cfg.mask.application;
    ro.workers = cfg.workers;
    BackwardOptions bo;
    bo.application = cfg.mask.application;
    bo.accumulation = cfg.accumulation;
    bo.workers = cfg.workers;

    auto prune = [&](int step) {
        const std::size_t before = cloud.size();
        const auto keep = prune_never_sampled<T>(cloud.mask_logits, cfg.mask.prune_repeats,
                                                 mix_seed(mask_seed, 0x100000 + std::uint64_t(step)));
        if (keep.size() != before) {
            cloud = cloud.select(keep);
            std::vector<std::int64_t> src(keep.begin(), keep.end());
            adam.reindex(src);
            follow(src);
        }
        res.report.events.push_back({CountEvent::Kind::prune, step, before, cloud.size()});
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        const int step = it + 1;
        if (stack.empty()) {
            stack = views.train;
            std::shuffle(stack.begin(), stack.end(), view_rng);
        }
        const std::size_t v = stack.back();
        stack.pop_back();
        const Camera<T> &cam = views.cameras[v];

        MaskSample<T> sample;
        if (cfg.use_masks) {
            switch (cfg.mask.mode) {
            case MaskMode::gumbel: sample = sample_masks<T>(cloud.mask_logits, cfg.mask.temperature, mask_rng); break;
            case MaskMode::ste: sample = ste_masks<T>(cloud.mask_logits, cfg.mask.ste_threshold); break;
            case MaskMode::all_on: sample = MaskSample<T>::all_on(cloud.size()); break;
            }
        }
        const std::span<const T> masks = cfg.use_masks ? std::span<const T>(sample.hard) : std::span<const T>{};

        const auto pv = prepare_view(cloud, cam, cfg.raster);
        const auto fb = render_masked(pv, masks, bg, cfg.raster, ro);
        const Image<T> rendered{fb.width, fb.height, fb.color};
        const ImageLoss<T> rl = render_loss(rendered, views.targets[v], cfg.ssim_weight);
        const double lambda = cfg.lambda_schedule.at(it);
        MaskLoss ml;
        if (cfg.use_masks) ml = mask_loss(sample, cfg.mask.loss_kind);
        const double loss = cfg.use_masks ? total_loss(rl.value, ml.value, lambda) : rl.value;
        if (!std::isfinite(loss)) {
            throw TrainingAborted<T>("non-finite loss at iteration " + std::to_string(step), step, cloud);
        }
        res.report.losses.push_back(loss);

        GradientSet<T> grads = GradientSet<T>::zeros(cloud);
        backward_view(cloud, cam, pv, fb, masks, std::span<const T>(rl.grad), bg, cfg.raster, bo, grads);
        res.report.overflow_pixels += grads.overflow_count;
        res.report.guard_events += grads.guard_events;

        std::vector<std::array<T, 2>> d_logits;
        if (cfg.use_masks) {
            d_logits.assign(cloud.size(), {T(0), T(0)});
            std::vector<T> d_mask(grads.d_mask_soft);
            if (lambda != 0.0)
                for (auto &d : d_mask) d += T(lambda * ml.d_each);
            accumulate_logit_grads(sample, std::span<const T>(d_mask), std::span<std::array<T, 2>>(d_logits));
        }
        try {
            adam.step(cloud, grads, std::span<const std::array<T, 2>>(d_logits), lr, views.extent);
        } catch (const std::runtime_error &e) {
            throw TrainingAborted<T>(std::string(e.what()) + " at iteration " + std::to_string(step), step, cloud);
        }

        if (cfg.densify.enabled && step < cfg.densify.stop) stats.add(grads);
        if (cfg.densify.is_event(step)) {
            const std::size_t before = cloud.size();
            auto d = densify(cloud, stats, cfg.densify, views.extent, densify_rng);
            cloud = std::move(d.cloud);
            adam.reindex(d.source);
            follow(d.source);
            res.report.events.push_back({CountEvent::Kind::densify, step, before, cloud.size()});
            if (cfg.learns_masks()) prune(step);
            stats.reset(cloud.size());
        } else if (cfg.learns_masks() && (!cfg.densify.enabled || step >= cfg.densify.stop) &&
                   step % cfg.prune_interval_after_densify == 0) {
            prune(step);
            stats.reset(cloud.size());
        }

        if (step % cfg.eval_interval == 0 && step != cfg.iterations) {
            EvalPoint e = evaluate(cloud, views, cfg, step);
            e.wall_seconds = seconds();
            res.report.evals.push_back(e);
            if (on_eval) on_eval(e);
        }
    }

    if (cfg.learns_masks()) {
        const std::size_t before = cloud.size();
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (existence_prob(cloud.mask_logits[i]) >= T(0.5)) keep.push_back(i);
        if (keep.size() != before) {
            cloud = cloud.select(keep);
            std::vector<std::int64_t> src(keep.begin(), keep.end());
            adam.reindex(src);
            follow(src);
        }
        res.report.events.push_back({CountEvent::Kind::compact, cfg.iterations, before, cloud.size()});
    }
    EvalPoint e = evaluate(cloud, views, cfg, cfg.iterations);
    e.wall_seconds = seconds();
    res.report.evals.push_back(e);
    if (on_eval) on_eval(e);
    res.report.wall_seconds = seconds();
    res.cloud = std::move(cloud);
    res.origin = std::move(origin);
    res.optimizer = std::move(adam);
    return res;
}

} // namespace maskraster
