// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary little-endian PLY in the common Gaussian-splat vertex layout, with two optional
// mask_logit_* extension properties.

#include "maskraster/gaussian.hpp"
#include "maskraster/io/atomic_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace maskraster::io {

/// A vertex property this library does not interpret, kept byte for byte.
struct PlyExtraProperty {
    std::string name;
    std::string type;
    std::vector<std::uint8_t> data; // count × type size
};

struct PlyCloud {
    GaussianCloud<float> cloud;
    bool has_mask_logits = false;
    std::vector<PlyExtraProperty> extras;
};

struct PlyReadOptions {
    std::array<double, 2> mask_init = {3.0, 0.0}; // used when the file has no mask properties
    bool keep_extras = true;
};

namespace ply_detail {

inline std::size_t
type_size(std::string_view t) {
    if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
    if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
    if (t == "int" || t == "int32" || t == "uint" || t == "uint32" || t == "float" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

inline bool
is_float32(std::string_view t) {
    return t == "float" || t == "float32";
}

inline float
load_f32(const std::uint8_t *p) {
    std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                         std::uint32_t(p[3]) << 24;
    return std::bit_cast<float>(bits);
}

inline void
store_f32(std::string &out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int k = 0; k < 4; ++k) out.push_back(char((bits >> (8 * k)) & 0xffu));
}

struct Property {
    std::string name;
    std::string type;
    std::size_t size = 0;
    std::size_t offset = 0; // within one record
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
    std::size_t stride = 0;
};

inline std::string
at(std::size_t offset) {
    return " (byte offset " + std::to_string(offset) + ")";
}

} // namespace ply_detail

/// Parses an in-memory PLY file. `label` names the source in error messages.
inline PlyCloud
parse_ply(std::string_view bytes, const PlyReadOptions &opts = {}, const std::string &label = "<memory>") {
    using namespace ply_detail;
    const auto fail = [&](const std::string &msg, std::size_t offset) -> IoError {
        return IoError(label + ": " + msg + at(offset));
    };

    // Header.
    std::size_t pos = 0;
    std::vector<Element> elements;
    bool saw_format = false, saw_end = false;
    int line_no = 0;
    while (pos < bytes.size()) {
        const std::size_t line_start = pos;
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) throw fail("header is not terminated by end_header", line_start);
        std::string line(bytes.substr(pos, nl - pos));
        pos = nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (line_no++ == 0) {
            if (kw != "ply") throw fail("missing 'ply' magic", 0);
            continue;
        }
        if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
        if (kw == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") throw fail("unsupported format '" + fmt + "'", line_start);
            if (ver != "1.0") throw fail("unsupported format version '" + ver + "'", line_start);
            saw_format = true;
        } else if (kw == "element") {
            Element e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0) throw fail("malformed element line '" + line + "'", line_start);
            e.count = std::size_t(count);
            elements.push_back(std::move(e));
        } else if (kw == "property") {
            if (elements.empty()) throw fail("property before any element", line_start);
            Property p;
            ls >> p.type;
            if (p.type == "list") throw fail("list properties are not supported", line_start);
            ls >> p.name;
            p.size = type_size(p.type);
            if (p.size == 0 || p.name.empty()) throw fail("malformed property line '" + line + "'", line_start);
            Element &e = elements.back();
            for (const auto &q : e.props)
                if (q.name == p.name) throw fail("duplicate property '" + p.name + "'", line_start);
            p.offset = e.stride;
            e.stride += p.size;
            e.props.push_back(std::move(p));
        } else if (kw == "end_header") {
            saw_end = true;
            break;
        } else {
            throw fail("unknown header keyword '" + kw + "'", line_start);
        }
    }
    if (!saw_end) throw fail("header is not terminated by end_header", pos);
    if (!saw_format) throw fail("missing format line", 0);

    const std::size_t payload_start = pos;
    std::size_t vertex_offset = payload_start;
    const Element *vertex = nullptr;
    std::size_t cursor = payload_start;
    for (const Element &e : elements) {
        if (e.name == "vertex") {
            vertex = &e;
            vertex_offset = cursor;
        }
        const std::size_t need = e.count * e.stride;
        if (bytes.size() < cursor + need) {
            throw fail("truncated payload: element '" + e.name + "' needs " + std::to_string(need) +
                           " bytes, " + std::to_string(bytes.size() > cursor ? bytes.size() - cursor : 0) +
                           " available",
                       cursor);
        }
        cursor += need;
    }
    if (!vertex) throw fail("no vertex element", payload_start);

    std::map<std::string, const Property *> by_name;
    for (const auto &p : vertex->props) by_name[p.name] = &p;
    auto require = [&](const std::string &name) -> const Property & {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw fail("missing vertex property '" + name + "'", payload_start);
        if (!is_float32(it->second->type)) {
            throw fail("property '" + name + "' has type " + it->second->type + ", expected float", payload_start);
        }
        return *it->second;
    };

    std::vector<std::string> known = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                                      "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
    std::size_t n_rest = 0;
    while (by_name.count("f_rest_" + std::to_string(n_rest))) ++n_rest;
    int degree = -1;
    for (int d = 0; d <= 3; ++d)
        if (std::size_t(3 * (sh_basis_count(d) - 1)) == n_rest) degree = d;
    if (degree < 0) throw fail("f_rest property count " + std::to_string(n_rest) + " matches no SH degree", payload_start);
    for (std::size_t k = 0; k < n_rest; ++k) known.push_back("f_rest_" + std::to_string(k));

    const bool has_m0 = by_name.count("mask_logit_0") != 0;
    const bool has_m1 = by_name.count("mask_logit_1") != 0;
    if (has_m0 != has_m1) throw fail("only one of mask_logit_0 / mask_logit_1 present", payload_start);
    if (has_m0) {
        known.push_back("mask_logit_0");
        known.push_back("mask_logit_1");
    }

    const std::array<const Property *, 3> pos_p = {&require("x"), &require("y"), &require("z")};
    const std::array<const Property *, 3> dc_p = {&require("f_dc_0"), &require("f_dc_1"), &require("f_dc_2")};
    const Property &op_p = require("opacity");
    const std::array<const Property *, 3> sc_p = {&require("scale_0"), &require("scale_1"), &require("scale_2")};
    const std::array<const Property *, 4> rot_p = {&require("rot_0"), &require("rot_1"), &require("rot_2"),
                                                   &require("rot_3")};
    std::vector<const Property *> rest_p;
    for (std::size_t k = 0; k < n_rest; ++k) rest_p.push_back(&require("f_rest_" + std::to_string(k)));
    const Property *m_p[2] = {nullptr, nullptr};
    if (has_m0) {
        m_p[0] = &require("mask_logit_0");
        m_p[1] = &require("mask_logit_1");
    }
    for (const char *nrm : {"nx", "ny", "nz"})
        if (by_name.count(nrm)) require(nrm);

    PlyCloud out;
    out.has_mask_logits = has_m0;
    GaussianCloud<float> &c = out.cloud;
    c.sh_degree = degree;
    const std::size_t n = vertex->count;
    c.resize(n);
    const int k_count = sh_basis_count(degree);
    const auto *base = reinterpret_cast<const std::uint8_t *>(bytes.data()) + vertex_offset;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t *rec = base + i * vertex->stride;
        auto f = [&](const Property *p) { return load_f32(rec + p->offset); };
        c.centers[i] = Vec3<float>(f(pos_p[0]), f(pos_p[1]), f(pos_p[2]));
        c.opacity_logits[i] = f(&op_p);
        c.log_scales[i] = Vec3<float>(f(sc_p[0]), f(sc_p[1]), f(sc_p[2]));
        c.rotations[i] = Vec4<float>(f(rot_p[0]), f(rot_p[1]), f(rot_p[2]), f(rot_p[3]));
        auto sh = c.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) {
            sh[ch] = f(dc_p[ch]);
            for (int k = 1; k < k_count; ++k) sh[3 * k + ch] = f(rest_p[std::size_t(ch * (k_count - 1) + (k - 1))]);
        }
        if (has_m0) c.mask_logits[i] = {f(m_p[0]), f(m_p[1])};
        else c.mask_logits[i] = {float(opts.mask_init[0]), float(opts.mask_init[1])};
    }

    if (opts.keep_extras) {
        for (const auto &p : vertex->props) {
            if (std::find(known.begin(), known.end(), p.name) != known.end()) continue;
            PlyExtraProperty e{p.name, p.type, std::vector<std::uint8_t>(n * p.size)};
            for (std::size_t i = 0; i < n; ++i) std::memcpy(&e.data[i * p.size], base + i * vertex->stride + p.offset, p.size);
            out.extras.push_back(std::move(e));
        }
    }
    return out;
}

/// Re-indexes extra properties after the cloud changed: entry i takes input entry origin[i]
/// (zero bytes when origin[i] < 0).
inline std::vector<PlyExtraProperty>
select_extras(std::span<const PlyExtraProperty> extras, std::span<const std::int64_t> origin) {
    std::vector<PlyExtraProperty> out;
    for (const auto &e : extras) {
        const std::size_t sz = ply_detail::type_size(e.type);
        PlyExtraProperty p{e.name, e.type, std::vector<std::uint8_t>(origin.size() * sz, 0)};
        for (std::size_t i = 0; i < origin.size(); ++i) {
            if (origin[i] < 0) continue;
            const std::size_t src = std::size_t(origin[i]) * sz;
            if (src + sz > e.data.size()) throw IoError("extra property '" + e.name + "' index out of range");
            std::memcpy(p.data.data() + i * sz, e.data.data() + src, sz);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline PlyCloud
read_ply(const std::filesystem::path &path, const PlyReadOptions &opts = {}) {
    const std::string data = read_file(path);
    return parse_ply(data, opts, path.string());
}

/// Serializes a cloud (values rounded to float32). Extras must hold one value per Gaussian.
template <std::floating_point T>
std::string
encode_ply(const GaussianCloud<T> &cloud, std::span<const PlyExtraProperty> extras = {}, bool write_masks = true) {
    using namespace ply_detail;
    cloud.validate();
    const std::size_t n = cloud.size();
    const int k_count = cloud.coeffs_per_channel();
    const std::size_t n_rest = std::size_t(3 * (k_count - 1));
    for (const auto &e : extras) {
        const std::size_t sz = type_size(e.type);
        if (sz == 0 || e.data.size() != n * sz) throw IoError("extra property '" + e.name + "' has the wrong size");
    }

    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
    for (const char *name : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
        h << "property float " << name << "\n";
    for (std::size_t k = 0; k < n_rest; ++k) h << "property float f_rest_" << k << "\n";
    for (const char *name : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
        h << "property float " << name << "\n";
    if (write_masks) h << "property float mask_logit_0\nproperty float mask_logit_1\n";
    for (const auto &e : extras) h << "property " << e.type << " " << e.name << "\n";
    h << "end_header\n";

    std::string out = h.str();
    std::size_t record = 4 * (17 + n_rest + (write_masks ? 2 : 0));
    for (const auto &e : extras) record += type_size(e.type);
    out.reserve(out.size() + n * record);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) store_f32(out, float(cloud.centers[i][k]));
        for (int k = 0; k < 3; ++k) store_f32(out, 0.0f);
        const auto sh = cloud.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) store_f32(out, float(sh[ch]));
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 1; k < k_count; ++k) store_f32(out, float(sh[3 * k + ch]));
        store_f32(out, float(cloud.opacity_logits[i]));
        for (int k = 0; k < 3; ++k) store_f32(out, float(cloud.log_scales[i][k]));
        for (int k = 0; k < 4; ++k) store_f32(out, float(cloud.rotations[i][k]));
        if (write_masks) {
            store_f32(out, float(cloud.mask_logits[i][0]));
            store_f32(out, float(cloud.mask_logits[i][1]));
        }
        for (const auto &e : extras) {
            const std::size_t sz = type_size(e.type);
            out.append(reinterpret_cast<const char *>(e.data.data() + i * sz), sz);
        }
    }
    return out;
}

template <std::floating_point T>
void
write_ply(const std::filesystem::path &path, const GaussianCloud<T> &cloud, std::span<const PlyExtraProperty> extras = {},
          bool write_masks = true) {
    atomic_write(path, encode_ply(cloud, extras, write_masks));
}

} // namespace maskraster::io
