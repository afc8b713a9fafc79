// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace maskraster {

/// Splat indices per screen tile, front to back.
struct TileBinning {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::uint32_t> offsets; // tile_count() + 1 entries
    std::vector<std::uint32_t> entries; // indices into the splat array

    [[nodiscard]] std::size_t tile_count() const { return std::size_t(tiles_x) * std::size_t(tiles_y); }
    [[nodiscard]] std::span<const std::uint32_t> tile(std::size_t t) const {
        return {entries.data() + offsets[t], offsets[t + 1] - offsets[t]};
    }
    [[nodiscard]] std::size_t tile_of_pixel(int x, int y) const {
        return std::size_t(y / tile_size) * std::size_t(tiles_x) + std::size_t(x / tile_size);
    }
};

struct TileRange {
    int x0, y0, x1, y1; // inclusive tile coordinates; empty when x0 > x1 or y0 > y1
};

template <std::floating_point T>
TileRange
tile_range(const Splat2D<T> &s, int tiles_x, int tiles_y, int tile_size) {
    const auto lo = [&](T v) { return int(std::floor(v / T(tile_size))); };
    TileRange r{lo(s.mean2d[0] - s.radius), lo(s.mean2d[1] - s.radius), lo(s.mean2d[0] + s.radius),
                lo(s.mean2d[1] + s.radius)};
    r.x0 = std::max(r.x0, 0);
    r.y0 = std::max(r.y0, 0);
    r.x1 = std::min(r.x1, tiles_x - 1);
    r.y1 = std::min(r.y1, tiles_y - 1);
    return r;
}

/// Assigns every splat to the tiles its footprint square touches. Within a tile, splats are
/// ordered by ascending depth, ties broken by ascending source index.
template <std::floating_point T>
TileBinning
bin_and_sort(std::span<const Splat2D<T>> splats, int width, int height, int tile_size = 16) {
    if (tile_size < 1) throw InvalidParameter("tile_size must be >= 1");
    TileBinning b;
    b.tile_size = tile_size;
    b.tiles_x = (width + tile_size - 1) / tile_size;
    b.tiles_y = (height + tile_size - 1) / tile_size;

    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t c) {
        if (splats[a].depth != splats[c].depth) return splats[a].depth < splats[c].depth;
        return splats[a].source_index < splats[c].source_index;
    });

    // Counting sort into tiles keeps the global depth order inside every tile.
    std::vector<std::uint32_t> counts(b.tile_count() + 1, 0);
    for (const std::uint32_t i : order) {
        const TileRange r = tile_range(splats[i], b.tiles_x, b.tiles_y, tile_size);
        for (int ty = r.y0; ty <= r.y1; ++ty)
            for (int tx = r.x0; tx <= r.x1; ++tx) ++counts[std::size_t(ty) * b.tiles_x + tx + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    b.offsets = counts;
    b.entries.resize(b.offsets.back());
    std::vector<std::uint32_t> cursor(b.offsets.begin(), b.offsets.end() - 1);
    for (const std::uint32_t i : order) {
        const TileRange r = tile_range(splats[i], b.tiles_x, b.tiles_y, tile_size);
        for (int ty = r.y0; ty <= r.y1; ++ty)
            for (int tx = r.x0; tx <= r.x1; ++tx) b.entries[cursor[std::size_t(ty) * b.tiles_x + tx]++] = i;
    }
    return b;
}

} // namespace maskraster
