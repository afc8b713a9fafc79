// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/gaussian.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maskraster {

enum class MaskMode { gumbel, ste, all_on };
enum class MaskLossKind { squared, l1 };
/// Where a sampled mask enters rendering: inside the blending recursion, or multiplied into
/// opacity before α filtering (the attribute-masking ablation).
enum class MaskApplication { rasterization, opacity };

inline std::string_view
to_string(MaskMode m) {
    switch (m) {
    case MaskMode::gumbel: return "gumbel";
    case MaskMode::ste: return "ste";
    case MaskMode::all_on: return "all_on";
    }
    return "?";
}
inline std::string_view
to_string(MaskLossKind k) {
    return k == MaskLossKind::squared ? "squared" : "l1";
}
inline std::string_view
to_string(MaskApplication a) {
    return a == MaskApplication::rasterization ? "rasterization" : "opacity";
}

inline MaskMode
parse_mask_mode(std::string_view s) {
    if (s == "gumbel") return MaskMode::gumbel;
    if (s == "ste") return MaskMode::ste;
    if (s == "all_on") return MaskMode::all_on;
    throw InvalidParameter("unknown mask mode '" + std::string(s) + "'");
}
inline MaskLossKind
parse_mask_loss_kind(std::string_view s) {
    if (s == "squared" || s == "l2") return MaskLossKind::squared;
    if (s == "l1") return MaskLossKind::l1;
    throw InvalidParameter("unknown mask loss kind '" + std::string(s) + "'");
}
inline MaskApplication
parse_mask_application(std::string_view s) {
    if (s == "rasterization" || s == "raster") return MaskApplication::rasterization;
    if (s == "opacity") return MaskApplication::opacity;
    throw InvalidParameter("unknown mask application '" + std::string(s) + "'");
}

struct MaskConfig {
    double temperature = 0.5;
    MaskMode mode = MaskMode::gumbel;
    double ste_threshold = 0.5;
    double lambda = 0.0;
    MaskLossKind loss_kind = MaskLossKind::squared;
    MaskApplication application = MaskApplication::rasterization;
    std::array<double, 2> init_logits = {3.0, 0.0};
    int prune_repeats = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(temperature > 0.0)) throw InvalidParameter("mask.temperature must be > 0");
        if (!(lambda >= 0.0)) throw InvalidParameter("mask.lambda must be >= 0");
        if (prune_repeats < 1) throw InvalidParameter("mask.prune_repeats must be >= 1");
    }
};

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t
mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t
mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(a ^ mix_seed(b));
}

/// Uniform in the open interval (0, 1) with 53 random bits; portable across standard libraries.
inline double
uniform_open(std::mt19937_64 &rng) {
    return (double(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double
standard_gumbel(std::mt19937_64 &rng) {
    return -std::log(-std::log(uniform_open(rng)));
}

/// One binary mask per Gaussian plus the relaxation it back-propagates through.
template <std::floating_point T> struct MaskSample {
    std::vector<T> hard;  // exactly 0 or 1
    std::vector<T> soft;  // relaxed present probability in (0, 1)
    std::vector<T> slope; // d soft / d z_present (= -d soft / d z_absent)
    bool pass_through = false;

    [[nodiscard]] std::size_t size() const { return hard.size(); }
    [[nodiscard]] std::size_t count_on() const {
        std::size_t n = 0;
        for (const T h : hard) n += h != T(0);
        return n;
    }

    static MaskSample all_on(std::size_t n) {
        MaskSample s;
        s.hard.assign(n, T(1));
        s.soft.assign(n, T(1));
        s.slope.assign(n, T(0));
        return s;
    }
};

/// Present component of the two-way softmax over (z_present, z_absent).
template <std::floating_point T>
inline T
existence_prob(const std::array<T, 2> &logits) {
    return sigmoid(logits[0] - logits[1]);
}

template <std::floating_point T>
std::vector<T>
existence_prob(std::span<const std::array<T, 2>> logits) {
    std::vector<T> out;
    out.reserve(logits.size());
    for (const auto &l : logits) out.push_back(existence_prob(l));
    return out;
}

/// Gumbel-softmax draw: hard = argmax of the perturbed logits, soft = tempered softmax
/// of the same perturbed logits. Consumes two Gumbel variates per Gaussian from `rng`.
template <std::floating_point T>
MaskSample<T>
sample_masks(std::span<const std::array<T, 2>> logits, double temperature, std::mt19937_64 &rng) {
    if (!(temperature > 0.0)) throw InvalidParameter("temperature must be > 0");
    MaskSample<T> s;
    s.pass_through = true;
    s.hard.resize(logits.size());
    s.soft.resize(logits.size());
    s.slope.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double present = double(logits[i][0]) + standard_gumbel(rng);
        const double absent = double(logits[i][1]) + standard_gumbel(rng);
        const double soft = sigmoid((present - absent) / temperature);
        s.hard[i] = present > absent ? T(1) : T(0);
        s.soft[i] = T(soft);
        s.slope[i] = T(soft * (1.0 - soft) / temperature);
    }
    return s;
}

template <std::floating_point T>
MaskSample<T>
sample_masks(std::span<const std::array<T, 2>> logits, double temperature, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed));
    return sample_masks(logits, temperature, rng);
}

/// Deterministic threshold masks; the gradient passes straight through the existence probability.
template <std::floating_point T>
MaskSample<T>
ste_masks(std::span<const std::array<T, 2>> logits, double threshold) {
    MaskSample<T> s;
    s.pass_through = true;
    for (const auto &l : logits) {
        const T p = existence_prob(l);
        s.hard.push_back(double(p) >= threshold ? T(1) : T(0));
        s.soft.push_back(p);
        s.slope.push_back(p * (T(1) - p));
    }
    return s;
}

/// Most probable mask (present iff existence probability >= threshold); no gradient.
template <std::floating_point T>
MaskSample<T>
mode_masks(std::span<const std::array<T, 2>> logits, double threshold = 0.5) {
    MaskSample<T> s = ste_masks(logits, threshold);
    s.pass_through = false;
    std::fill(s.slope.begin(), s.slope.end(), T(0));
    return s;
}

struct MaskLoss {
    double value = 0.0;
    double d_each = 0.0; // dL/d(mask_i), identical for every Gaussian
};

/// Mean-of-masks regularizer over forward (hard) values: squared -> mean², l1 -> mean.
template <std::floating_point T>
MaskLoss
mask_loss(const MaskSample<T> &sample, MaskLossKind kind) {
    const std::size_t n = sample.size();
    if (n == 0) throw InvalidParameter("mask_loss needs at least one Gaussian");
    double sum = 0.0;
    for (const T h : sample.hard) sum += double(h);
    const double mean = sum / double(n);
    if (kind == MaskLossKind::squared) return {mean * mean, 2.0 * mean / double(n)};
    return {mean, 1.0 / double(n)};
}

/// Chains d_soft into the two logits of each Gaussian (adds into d_logits).
template <std::floating_point T>
void
accumulate_logit_grads(const MaskSample<T> &sample, std::span<const T> d_soft, std::span<std::array<T, 2>> d_logits) {
    if (!sample.pass_through) return;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const T g = d_soft[i] * sample.slope[i];
        d_logits[i][0] += g;
        d_logits[i][1] -= g;
    }
}

/// Indices of Gaussians sampled present at least once in `repeats` independent Gumbel draws.
template <std::floating_point T>
std::vector<std::size_t>
prune_never_sampled(std::span<const std::array<T, 2>> logits, int repeats, std::uint64_t seed) {
    if (repeats < 1) throw InvalidParameter("prune repeats must be >= 1");
    std::mt19937_64 rng(mix_seed(seed));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        bool sampled = false;
        for (int k = 0; k < repeats; ++k) {
            const double present = double(logits[i][0]) + standard_gumbel(rng);
            const double absent = double(logits[i][1]) + standard_gumbel(rng);
            sampled = sampled || present > absent;
        }
        if (sampled) keep.push_back(i);
    }
    return keep;
}

} // namespace maskraster
