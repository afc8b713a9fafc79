// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/image.hpp"
#include "maskraster/io/atomic_file.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace maskraster::io {

/// Nearest 8-bit level of a [0, 1] value (values outside are clamped).
inline std::uint8_t
quantize_8bit(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return std::uint8_t(std::lround(v * 255.0));
}

template <std::floating_point T>
std::vector<std::uint8_t>
to_rgb8(const Image<T> &img) {
    std::vector<std::uint8_t> px(img.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize_8bit(double(img.data[i]));
    return px;
}

/// Encodes an 8-bit RGB PNG.
template <std::floating_point T>
std::string
encode_png(const Image<T> &img) {
    if (img.width < 1 || img.height < 1) throw IoError("cannot encode an empty image");
    const auto px = to_rgb8(img);
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = png_uint_32(img.width);
    pi.height = png_uint_32(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("png encode failed: ") + pi.message);
    }
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("png encode failed: ") + pi.message);
    }
    out.resize(size);
    return out;
}

template <std::floating_point T>
void
write_png(const std::filesystem::path &path, const Image<T> &img) {
    atomic_write(path, encode_png(img));
}

/// Decodes any PNG libpng understands to linear RGB in [0, 1] (alpha is dropped, gray expanded).
inline Image<float>
decode_png(const std::string &bytes, const std::string &label = "<memory>") {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
        throw IoError(label + ": " + pi.message);
    }
    pi.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&pi);
        throw IoError(label + ": " + pi.message);
    }
    Image<float> img = Image<float>::zeros(int(pi.width), int(pi.height));
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = float(px[i]) / 255.0f;
    return img;
}

/// Width and height from the PNG header, without decoding pixels.
inline std::pair<int, int>
png_dimensions(const std::filesystem::path &path) {
    const std::string bytes = read_file(path);
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
        throw IoError(path.string() + ": " + pi.message);
    }
    const std::pair<int, int> dims{int(pi.width), int(pi.height)};
    png_image_free(&pi);
    return dims;
}

inline Image<float>
read_png(const std::filesystem::path &path) {
    return decode_png(read_file(path), path.string());
}

} // namespace maskraster::io
