// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration as one JSON object. Keys may be nested objects or dotted names
// ("densify.interval": 100 and {"densify": {"interval": 100}} are the same key); command-line
// `key=value` overrides are applied on top of the file.

#include "maskraster/io/atomic_file.hpp"
#include "maskraster/scene.hpp"
#include "maskraster/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace maskraster::io {

using Json = nlohmann::json;
using FlatConfig = std::map<std::string, Json>;

inline void
flatten_into(const Json &j, const std::string &prefix, FlatConfig &out) {
    if (j.is_object()) {
        for (const auto &[k, v] : j.items()) flatten_into(v, prefix.empty() ? k : prefix + "." + k, out);
        return;
    }
    if (prefix.empty()) throw InvalidParameter("config root must be a JSON object");
    out[prefix] = j;
}

inline FlatConfig
flatten(const Json &j) {
    FlatConfig out;
    if (!j.is_null()) flatten_into(j, "", out);
    return out;
}

inline FlatConfig
parse_config_text(std::string_view text, const std::string &label = "<config>") {
    try {
        return flatten(Json::parse(text));
    } catch (const Json::parse_error &e) {
        throw InvalidParameter(label + ": " + e.what());
    }
}

inline FlatConfig
load_config_file(const std::filesystem::path &path) {
    return parse_config_text(read_file(path), path.string());
}

/// `key=value`; the value is read as JSON when it parses as JSON, otherwise as a string.
inline void
apply_override(FlatConfig &cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw InvalidParameter("override '" + std::string(assignment) + "' is not key=value");
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    FlatConfig nested = flatten(Json{{key, value}});
    for (auto &[k, v] : nested) cfg[k] = std::move(v);
}

/// Everything a `train` or `prune` run needs besides the trainer settings.
struct RunConfig {
    std::string profile = "desk"; // "desk" (synthetic-scene defaults) or "full" (30000-iteration defaults)
    TrainConfig train;
    std::string manifest;         // empty: generate the synthetic scene
    SyntheticSceneConfig synthetic;
    std::string init_ply;         // empty: random over-provisioned start
    double overprovision = 4.0;   // random start size relative to the synthetic scene
    int init_count = 0;           // explicit random start size; required for manifests without init.ply
    int init_sh_degree = 3;
    std::uint64_t init_seed = 0;
    std::array<double, 2> init_logits = {3.0, 0.0};
};

namespace config_detail {

inline Vec3<double>
parse_color(const Json &j) {
    if (j.is_string()) {
        if (j == "white") return Vec3<double>::Ones();
        if (j == "black") return Vec3<double>::Zero();
        throw InvalidParameter("unknown color name " + j.dump());
    }
    if (!j.is_array() || j.size() != 3) throw InvalidParameter("color must be \"white\", \"black\" or [r, g, b]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline LambdaSchedule
parse_schedule(const Json &j) {
    if (!j.is_array()) throw InvalidParameter("lambda_schedule must be a list of [start, end, lambda]");
    LambdaSchedule s;
    for (const Json &w : j) {
        if (w.is_array() && w.size() == 3) {
            s.windows.push_back({w[0].get<int>(), w[1].get<int>(), w[2].get<double>()});
        } else if (w.is_object()) {
            s.windows.push_back({w.at("start").get<int>(), w.at("end").get<int>(), w.at("lambda").get<double>()});
        } else {
            throw InvalidParameter("lambda window must be [start, end, lambda] or {start, end, lambda}");
        }
    }
    return s;
}

inline Accumulation
parse_accumulation(const std::string &s) {
    if (s == "deterministic") return Accumulation::deterministic;
    if (s == "shared_atomic") return Accumulation::shared_atomic;
    throw InvalidParameter("unknown accumulation '" + s + "'");
}

inline std::string_view
to_string(Accumulation a) {
    return a == Accumulation::deterministic ? "deterministic" : "shared_atomic";
}

using Setter = std::function<void(RunConfig &, const Json &)>;

template <class F> Setter
field(F f) {
    return [f](RunConfig &r, const Json &j) { f(r) = j.get<std::remove_reference_t<decltype(f(r))>>(); };
}

inline const std::map<std::string, Setter, std::less<>> &
setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"manifest", field([](RunConfig &r) -> std::string & { return r.manifest; })},
        {"synthetic.seed", field([](RunConfig &r) -> std::uint64_t & { return r.synthetic.seed; })},
        {"synthetic.gaussians", field([](RunConfig &r) -> int & { return r.synthetic.n_gaussians; })},
        {"synthetic.cameras", field([](RunConfig &r) -> int & { return r.synthetic.n_cameras; })},
        {"synthetic.width", field([](RunConfig &r) -> int & { return r.synthetic.width; })},
        {"synthetic.height", field([](RunConfig &r) -> int & { return r.synthetic.height; })},
        {"synthetic.sh_degree", field([](RunConfig &r) -> int & { return r.synthetic.sh_degree; })},
        {"init.ply", field([](RunConfig &r) -> std::string & { return r.init_ply; })},
        {"init.count", field([](RunConfig &r) -> int & { return r.init_count; })},
        {"init.overprovision", field([](RunConfig &r) -> double & { return r.overprovision; })},
        {"init.sh_degree", field([](RunConfig &r) -> int & { return r.init_sh_degree; })},
        {"init.seed", field([](RunConfig &r) -> std::uint64_t & { return r.init_seed; })},
        {"ssim_weight", field([](RunConfig &r) -> double & { return r.train.ssim_weight; })},
        {"seed", field([](RunConfig &r) -> std::uint64_t & { return r.train.seed; })},
        {"eval_interval", field([](RunConfig &r) -> int & { return r.train.eval_interval; })},
        {"prune_interval_after_densify",
         field([](RunConfig &r) -> int & { return r.train.prune_interval_after_densify; })},
        {"use_masks", field([](RunConfig &r) -> bool & { return r.train.use_masks; })},
        {"workers", field([](RunConfig &r) -> unsigned & { return r.train.workers; })},
        {"background", [](RunConfig &r, const Json &j) { r.train.background = parse_color(j); }},
        {"accumulation",
         [](RunConfig &r, const Json &j) { r.train.accumulation = parse_accumulation(j.get<std::string>()); }},
        {"lr.position", field([](RunConfig &r) -> double & { return r.train.lr.position; })},
        {"lr.position_final", field([](RunConfig &r) -> double & { return r.train.lr.position_final; })},
        {"lr.position_decay_steps",
         field([](RunConfig &r) -> std::uint64_t & { return r.train.lr.position_decay_steps; })},
        {"lr.sh_dc", field([](RunConfig &r) -> double & { return r.train.lr.sh_dc; })},
        {"lr.sh_rest", field([](RunConfig &r) -> double & { return r.train.lr.sh_rest; })},
        {"lr.opacity", field([](RunConfig &r) -> double & { return r.train.lr.opacity; })},
        {"lr.scale", field([](RunConfig &r) -> double & { return r.train.lr.scale; })},
        {"lr.rotation", field([](RunConfig &r) -> double & { return r.train.lr.rotation; })},
        {"lr.mask", field([](RunConfig &r) -> double & { return r.train.lr.mask; })},
        {"densify.enabled", field([](RunConfig &r) -> bool & { return r.train.densify.enabled; })},
        {"densify.interval", field([](RunConfig &r) -> int & { return r.train.densify.interval; })},
        {"densify.start", field([](RunConfig &r) -> int & { return r.train.densify.start; })},
        {"densify.stop", field([](RunConfig &r) -> int & { return r.train.densify.stop; })},
        {"densify.grad_threshold", field([](RunConfig &r) -> double & { return r.train.densify.grad_threshold; })},
        {"densify.scale_threshold", field([](RunConfig &r) -> double & { return r.train.densify.scale_threshold; })},
        {"densify.min_opacity", field([](RunConfig &r) -> double & { return r.train.densify.min_opacity; })},
        {"densify.split_children", field([](RunConfig &r) -> int & { return r.train.densify.split_children; })},
        {"densify.split_scale_divisor",
         field([](RunConfig &r) -> double & { return r.train.densify.split_scale_divisor; })},
        {"mask.temperature", field([](RunConfig &r) -> double & { return r.train.mask.temperature; })},
        {"mask.mode", [](RunConfig &r, const Json &j) { r.train.mask.mode = parse_mask_mode(j.get<std::string>()); }},
        {"mask.ste_threshold", field([](RunConfig &r) -> double & { return r.train.mask.ste_threshold; })},
        {"mask.loss",
         [](RunConfig &r, const Json &j) { r.train.mask.loss_kind = parse_mask_loss_kind(j.get<std::string>()); }},
        {"mask.loss_kind",
         [](RunConfig &r, const Json &j) { r.train.mask.loss_kind = parse_mask_loss_kind(j.get<std::string>()); }},
        {"mask.seed", field([](RunConfig &r) -> std::uint64_t & { return r.train.mask.seed; })},
        {"mask.application",
         [](RunConfig &r, const Json &j) {
             r.train.mask.application = parse_mask_application(j.get<std::string>());
         }},
        {"mask.init_logits",
         [](RunConfig &r, const Json &j) {
             if (!j.is_array() || j.size() != 2) throw InvalidParameter("mask.init_logits must be [present, absent]");
             r.init_logits = {j[0].get<double>(), j[1].get<double>()};
         }},
        {"mask.prune_repeats", field([](RunConfig &r) -> int & { return r.train.mask.prune_repeats; })},
        {"raster.alpha_max", field([](RunConfig &r) -> double & { return r.train.raster.alpha_max; })},
        {"raster.alpha_min", field([](RunConfig &r) -> double & { return r.train.raster.alpha_min; })},
        {"raster.cov2d_floor", field([](RunConfig &r) -> double & { return r.train.raster.cov2d_floor; })},
        {"raster.transmittance_min", field([](RunConfig &r) -> double & { return r.train.raster.transmittance_min; })},
        {"raster.early_stop", field([](RunConfig &r) -> bool & { return r.train.raster.early_stop; })},
        {"raster.tile_size", field([](RunConfig &r) -> int & { return r.train.raster.tile_size; })},
        {"raster.max_contributors", field([](RunConfig &r) -> int & { return r.train.raster.max_contributors; })},
    };
    return table;
}

} // namespace config_detail

/// Builds a RunConfig. Order: `profile` picks the base defaults, then `iterations`, then every
/// other key; the λ_m schedule is taken from `lambda_schedule`, else a constant `lambda` over
/// all iterations, else `preset`, else the profile's default.
inline RunConfig
load_run_config(const FlatConfig &flat) {
    RunConfig r;
    const auto get = [&](const std::string &k) -> const Json * {
        const auto it = flat.find(k);
        return it == flat.end() ? nullptr : &it->second;
    };
    try {
        if (const Json *p = get("profile")) r.profile = p->get<std::string>();
        if (r.profile == "desk") r.train = desk_train_config();
        else if (r.profile != "full") throw InvalidParameter("unknown profile '" + r.profile + "'");
        if (const Json *it = get("iterations")) r.train.iterations = it->get<int>();
    } catch (const Json::exception &e) {
        throw InvalidParameter(std::string("config: ") + e.what());
    }

    const auto &table = config_detail::setters();
    for (const auto &[key, value] : flat) {
        if (key == "profile" || key == "iterations" || key == "lambda" || key == "mask.lambda" ||
            key == "lambda_schedule" || key == "preset")
            continue;
        const auto s = table.find(key);
        if (s == table.end()) throw InvalidParameter("unknown config key '" + key + "'");
        try {
            s->second(r, value);
        } catch (const Json::exception &e) {
            throw InvalidParameter("config key '" + key + "': " + e.what());
        }
    }

    try {
        if (const Json *s = get("lambda_schedule")) r.train.lambda_schedule = config_detail::parse_schedule(*s);
        else if (const Json *l = get("lambda")) r.train.lambda_schedule = LambdaSchedule::constant(l->get<double>(), r.train.iterations);
        else if (const Json *m = get("mask.lambda"))
            r.train.lambda_schedule = LambdaSchedule::constant(m->get<double>(), r.train.iterations);
        else if (const Json *p = get("preset")) r.train.lambda_schedule = preset_schedule(p->get<std::string>());
        else if (r.profile == "desk") r.train.lambda_schedule = desk_train_config(r.train.iterations).lambda_schedule;
    } catch (const Json::exception &e) {
        throw InvalidParameter(std::string("config lambda: ") + e.what());
    }
    if (r.init_count < 0) throw InvalidParameter("init.count must be >= 0");
    if (!(r.overprovision > 0.0)) throw InvalidParameter("init.overprovision must be > 0");
    if (r.init_sh_degree < 0 || r.init_sh_degree > 3) throw InvalidParameter("init.sh_degree must be in [0, 3]");
    r.train.validate();
    if (r.manifest.empty()) r.synthetic.validate();
    return r;
}

inline Json
color_json(const Vec3<double> &c) {
    return Json::array({c[0], c[1], c[2]});
}

/// The fully resolved configuration, in the same nested key layout the loader accepts.
inline Json
effective_config(const RunConfig &r) {
    const TrainConfig &t = r.train;
    Json sched = Json::array();
    for (const auto &w : t.lambda_schedule.windows) sched.push_back(Json::array({w.start, w.end, w.lambda}));
    Json j;
    j["profile"] = r.profile;
    j["iterations"] = t.iterations;
    j["lambda_schedule"] = sched;
    j["ssim_weight"] = t.ssim_weight;
    j["seed"] = t.seed;
    j["eval_interval"] = t.eval_interval;
    j["prune_interval_after_densify"] = t.prune_interval_after_densify;
    j["use_masks"] = t.use_masks;
    j["workers"] = t.workers;
    j["background"] = color_json(t.background);
    j["accumulation"] = config_detail::to_string(t.accumulation);
    j["manifest"] = r.manifest;
    j["synthetic"] = {{"seed", r.synthetic.seed},          {"gaussians", r.synthetic.n_gaussians},
                      {"cameras", r.synthetic.n_cameras},  {"width", r.synthetic.width},
                      {"height", r.synthetic.height},      {"sh_degree", r.synthetic.sh_degree}};
    j["init"] = {{"ply", r.init_ply},
                 {"count", r.init_count},
                 {"overprovision", r.overprovision},
                 {"sh_degree", r.init_sh_degree},
                 {"seed", r.init_seed}};
    j["lr"] = {{"position", t.lr.position},
               {"position_final", t.lr.position_final},
               {"position_decay_steps", t.lr.position_decay_steps},
               {"sh_dc", t.lr.sh_dc},
               {"sh_rest", t.lr.sh_rest},
               {"opacity", t.lr.opacity},
               {"scale", t.lr.scale},
               {"rotation", t.lr.rotation},
               {"mask", t.lr.mask}};
    j["densify"] = {{"enabled", t.densify.enabled},
                    {"interval", t.densify.interval},
                    {"start", t.densify.start},
                    {"stop", t.densify.stop},
                    {"grad_threshold", t.densify.grad_threshold},
                    {"scale_threshold", t.densify.scale_threshold},
                    {"min_opacity", t.densify.min_opacity},
                    {"split_children", t.densify.split_children},
                    {"split_scale_divisor", t.densify.split_scale_divisor}};
    j["mask"] = {{"temperature", t.mask.temperature},
                 {"mode", to_string(t.mask.mode)},
                 {"ste_threshold", t.mask.ste_threshold},
                 {"loss", to_string(t.mask.loss_kind)},
                 {"application", to_string(t.mask.application)},
                 {"init_logits", Json::array({r.init_logits[0], r.init_logits[1]})},
                 {"prune_repeats", t.mask.prune_repeats},
                 {"seed", t.mask.seed}};
    j["raster"] = {{"alpha_max", t.raster.alpha_max},
                   {"alpha_min", t.raster.alpha_min},
                   {"cov2d_floor", t.raster.cov2d_floor},
                   {"transmittance_min", t.raster.transmittance_min},
                   {"early_stop", t.raster.early_stop},
                   {"tile_size", t.raster.tile_size},
                   {"max_contributors", t.raster.max_contributors}};
    return j;
}

} // namespace maskraster::io
