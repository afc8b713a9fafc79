// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/adam.hpp"
#include "maskraster/io/atomic_file.hpp"
#include "maskraster/io/config.hpp"
#include "maskraster/io/ply.hpp"
#include "maskraster/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

namespace maskraster::io {

/// JSON has no infinity; identical images (PSNR = +inf) are written as null.
inline Json
finite_or_null(double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
}

inline Json
eval_json(const EvalPoint &e) {
    return {{"iteration", e.iteration},           {"psnr", finite_or_null(e.psnr)},
            {"ssim", e.ssim},                     {"gaussian_count", e.gaussian_count},
            {"active_count", e.active_count},     {"wall_seconds", e.wall_seconds}};
}

inline Json
report_json(const TrainReport &r, const Json &effective) {
    Json evals = Json::array(), events = Json::array();
    for (const auto &e : r.evals) evals.push_back(eval_json(e));
    for (const auto &e : r.events)
        events.push_back({{"kind", to_string(e.kind)}, {"iteration", e.iteration}, {"before", e.before}, {"after", e.after}});
    Json j;
    j["config"] = effective;
    j["evals"] = evals;
    j["events"] = events;
    j["iterations_run"] = r.losses.size();
    j["final_loss"] = r.losses.empty() ? Json(nullptr) : finite_or_null(r.losses.back());
    j["overflow_pixels"] = r.overflow_pixels;
    j["guard_events"] = r.guard_events;
    j["wall_seconds"] = r.wall_seconds;
    if (!r.evals.empty()) j["final"] = eval_json(r.final_eval());
    return j;
}

/// One row per evaluation point.
inline std::string
metrics_csv(const TrainReport &r) {
    std::ostringstream os;
    os.precision(10);
    os << "iteration,psnr,ssim,gaussian_count,active_count,wall_seconds\n";
    for (const auto &e : r.evals)
        os << e.iteration << ',' << e.psnr << ',' << e.ssim << ',' << e.gaussian_count << ',' << e.active_count << ','
           << e.wall_seconds << '\n';
    return os.str();
}

/// One row per training iteration (1-based).
inline std::string
loss_csv(const TrainReport &r) {
    std::ostringstream os;
    os.precision(17);
    os << "iteration,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) os << i + 1 << ',' << r.losses[i] << '\n';
    return os.str();
}

/// Optimizer moments, schedule position and mask logits; the parameters themselves live in
/// the PLY written next to it.
template <std::floating_point T>
Json
checkpoint_sidecar(const GaussianCloud<T> &cloud, const AdamState &adam, const TrainConfig &cfg, int iteration) {
    Json groups;
    for (std::size_t g = 0; g < kParamGroupCount; ++g) {
        const auto snap = adam.group(ParamGroup(g));
        groups[std::string(to_string(ParamGroup(g)))] = {{"width", snap.width}, {"m", snap.m}, {"v", snap.v}};
    }
    Json logits = Json::array();
    for (const auto &l : cloud.mask_logits) logits.push_back({double(l[0]), double(l[1])});
    Json sched = Json::array();
    for (const auto &w : cfg.lambda_schedule.windows) sched.push_back(Json::array({w.start, w.end, w.lambda}));
    return {{"iteration", iteration},
            {"gaussian_count", cloud.size()},
            {"lambda_schedule", sched},
            {"lambda_next", cfg.lambda_schedule.at(iteration)},
            {"adam",
             {{"step", adam.step_count()},
              {"beta1", adam.hyper.beta1},
              {"beta2", adam.hyper.beta2},
              {"eps", adam.hyper.eps},
              {"groups", groups}}},
            {"mask_logits", logits}};
}

/// Writes `<stem>.ply` and `<stem>.json`.
template <std::floating_point T>
void
write_checkpoint(const std::filesystem::path &stem, const GaussianCloud<T> &cloud, const AdamState &adam,
                 const TrainConfig &cfg, int iteration) {
    std::filesystem::path ply = stem, side = stem;
    ply += ".ply";
    side += ".json";
    write_ply(ply, cloud);
    atomic_write(side, checkpoint_sidecar(cloud, adam, cfg, iteration).dump() + "\n");
}

} // namespace maskraster::io
