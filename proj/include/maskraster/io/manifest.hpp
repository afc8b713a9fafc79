// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Camera list with per-view images and the train/eval split, as JSON:
//
//   {"background": [1, 1, 1],
//    "cameras": [{"name": "view_000", "width": 64, "height": 64,
//                 "fx": 70.4, "fy": 70.4, "cx": 32, "cy": 32,
//                 "rotation": [9 values, world to camera, row-major],
//                 "translation": [3 values], "image": "images/view_000.png"}, ...],
//    "train": [0, 1, ...], "eval": [3, 9]}
//
// Image paths are relative to the manifest's directory. Without "train"/"eval" the split
// defaults to the held-out rule of the synthetic scenes.

#include "maskraster/io/config.hpp"
#include "maskraster/io/png.hpp"
#include "maskraster/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace maskraster::io {

struct ManifestView {
    std::string name;
    Camera<double> camera;
    std::string image; // as written in the manifest
};

struct SceneManifest {
    std::vector<ManifestView> views;
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
    std::optional<Vec3<double>> background;
    std::filesystem::path base_dir;

    [[nodiscard]] std::filesystem::path image_path(std::size_t i) const {
        const std::filesystem::path p(views[i].image);
        return p.is_absolute() ? p : base_dir / p;
    }

    /// Checks camera parameters and indices, and (optionally) that every image exists with the
    /// declared size.
    void validate(bool check_images = true) const {
        if (views.empty()) throw InvalidParameter("manifest lists no cameras");
        for (const std::size_t i : train)
            if (i >= views.size()) throw InvalidParameter("manifest train index " + std::to_string(i) + " out of range");
        for (const std::size_t i : eval)
            if (i >= views.size()) throw InvalidParameter("manifest eval index " + std::to_string(i) + " out of range");
        for (std::size_t i = 0; i < views.size(); ++i) {
            const auto &v = views[i];
            try {
                v.camera.validate();
            } catch (const InvalidParameter &e) {
                throw InvalidParameter("camera '" + v.name + "': " + e.what());
            }
            if (!check_images || v.image.empty()) continue;
            const auto path = image_path(i);
            if (!std::filesystem::exists(path)) throw IoError("camera '" + v.name + "': image " + path.string() + " not found");
            const auto [w, h] = png_dimensions(path);
            if (w != v.camera.width || h != v.camera.height) {
                throw IoError("camera '" + v.name + "': image " + path.string() + " is " + std::to_string(w) + "x" +
                              std::to_string(h) + ", camera declares " + std::to_string(v.camera.width) + "x" +
                              std::to_string(v.camera.height));
            }
        }
    }
};

inline SceneManifest
parse_manifest(const Json &j, const std::filesystem::path &base_dir = {}) {
    SceneManifest m;
    m.base_dir = base_dir;
    try {
        for (const Json &c : j.at("cameras")) {
            ManifestView v;
            v.name = c.value("name", "view_" + std::to_string(m.views.size()));
            v.camera.width = c.at("width").get<int>();
            v.camera.height = c.at("height").get<int>();
            v.camera.fx = c.at("fx").get<double>();
            v.camera.fy = c.at("fy").get<double>();
            v.camera.cx = c.value("cx", 0.5 * v.camera.width);
            v.camera.cy = c.value("cy", 0.5 * v.camera.height);
            const auto r = c.at("rotation").get<std::vector<double>>();
            const auto t = c.at("translation").get<std::vector<double>>();
            if (r.size() != 9) throw InvalidParameter("camera '" + v.name + "': rotation needs 9 values");
            if (t.size() != 3) throw InvalidParameter("camera '" + v.name + "': translation needs 3 values");
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) v.camera.rotation(a, b) = r[std::size_t(3 * a + b)];
                v.camera.translation[a] = t[std::size_t(a)];
            }
            v.image = c.value("image", "");
            m.views.push_back(std::move(v));
        }
        if (j.contains("train")) m.train = j.at("train").get<std::vector<std::size_t>>();
        if (j.contains("eval")) m.eval = j.at("eval").get<std::vector<std::size_t>>();
        if (j.contains("background")) m.background = config_detail::parse_color(j.at("background"));
    } catch (const Json::exception &e) {
        throw InvalidParameter(std::string("manifest: ") + e.what());
    }
    if (!j.contains("train") && !j.contains("eval")) split_views(m.views.size(), m.train, m.eval);
    return m;
}

inline SceneManifest
load_manifest(const std::filesystem::path &path, bool check_images = true) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::parse_error &e) {
        throw InvalidParameter(path.string() + ": " + e.what());
    }
    SceneManifest m = parse_manifest(j, path.parent_path());
    m.validate(check_images);
    return m;
}

inline Json
manifest_json(const SceneManifest &m) {
    Json cams = Json::array();
    for (const auto &v : m.views) {
        std::vector<double> r, t;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) r.push_back(v.camera.rotation(a, b));
            t.push_back(v.camera.translation[a]);
        }
        cams.push_back({{"name", v.name},
                        {"width", v.camera.width},
                        {"height", v.camera.height},
                        {"fx", v.camera.fx},
                        {"fy", v.camera.fy},
                        {"cx", v.camera.cx},
                        {"cy", v.camera.cy},
                        {"rotation", r},
                        {"translation", t},
                        {"image", v.image}});
    }
    Json j = {{"cameras", cams}, {"train", m.train}, {"eval", m.eval}};
    if (m.background) j["background"] = color_json(*m.background);
    return j;
}

inline void
write_manifest(const std::filesystem::path &path, const SceneManifest &m) {
    atomic_write(path, manifest_json(m).dump(2) + "\n");
}

/// Cameras and decoded target images, ready for training.
inline TrainingViews<float>
load_training_views(const SceneManifest &m) {
    TrainingViews<float> v;
    std::vector<Camera<double>> cams;
    for (std::size_t i = 0; i < m.views.size(); ++i) {
        cams.push_back(m.views[i].camera);
        v.cameras.push_back(m.views[i].camera.cast<float>());
        if (m.views[i].image.empty()) throw InvalidParameter("camera '" + m.views[i].name + "' has no image");
        v.targets.push_back(read_png(m.image_path(i)));
    }
    v.train = m.train;
    v.eval = m.eval;
    v.extent = scene_extent(cams);
    return v;
}

} // namespace maskraster::io
