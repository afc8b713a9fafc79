// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/backward.hpp"
#include "maskraster/gaussian.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskraster {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// One Adam update of a scalar; `step` is the 1-based step count after this update.
inline void
adam_update(double &x, double g, double &m, double &v, std::uint64_t step, double lr, const AdamHyper &h = {}) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(h.beta1, double(step)));
    const double v_hat = v / (1.0 - std::pow(h.beta2, double(step)));
    x -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
}

enum class ParamGroup { position, sh_dc, sh_rest, opacity, scale, rotation, mask };
inline constexpr std::size_t kParamGroupCount = 7;

inline std::string_view
to_string(ParamGroup g) {
    static constexpr std::array<std::string_view, kParamGroupCount> names = {
        "position", "sh_dc", "sh_rest", "opacity", "scale", "rotation", "mask"};
    return names[std::size_t(g)];
}

/// Per-group learning rates. The position rate is multiplied by the scene extent and decays
/// log-linearly from `position` to `position_final` over `position_decay_steps`
/// (0 = the length of the training run).
struct LearningRates {
    double position = 1.6e-4;
    double position_final = 1.6e-6;
    std::uint64_t position_decay_steps = 0;
    double sh_dc = 2.5e-3;
    double sh_rest = 2.5e-3 / 20.0;
    double opacity = 0.05;
    double scale = 5e-3;
    double rotation = 1e-3;
    double mask = 0.01;

    [[nodiscard]] double position_at(std::uint64_t step, double extent) const {
        if (!(position > 0.0) || !(position_final > 0.0)) return 0.0;
        const double t = position_decay_steps == 0 ? 1.0 : std::min(1.0, double(step) / double(position_decay_steps));
        return extent * std::exp((1.0 - t) * std::log(position) + t * std::log(position_final));
    }
};

/// Adam moments for every trainable array of a GaussianCloud, kept aligned with the cloud
/// through densification and pruning.
class AdamState {
  public:
    AdamHyper hyper;

    AdamState() = default;
    template <std::floating_point T> explicit AdamState(const GaussianCloud<T> &cloud, AdamHyper h = {}) : hyper(h) {
        resize_for(cloud.size(), cloud.sh_stride());
    }

    /// Raw moments of one parameter group, `width` values per Gaussian.
    struct GroupSnapshot {
        std::size_t width = 0;
        std::vector<double> m, v;
    };

    [[nodiscard]] std::uint64_t step_count() const { return step_; }
    [[nodiscard]] GroupSnapshot group(ParamGroup g) const {
        const Group &gr = groups_[std::size_t(g)];
        return {gr.width, gr.m, gr.v};
    }
    [[nodiscard]] std::size_t size() const { return n_; }

    /// Rebuilds the state for a new cloud layout: entry i of the new cloud takes the moments of
    /// old entry source[i], or zeros when source[i] < 0.
    void reindex(std::span<const std::int64_t> source) {
        for (Group &g : groups_) {
            std::vector<double> m(source.size() * g.width, 0.0), v(source.size() * g.width, 0.0);
            for (std::size_t i = 0; i < source.size(); ++i) {
                if (source[i] < 0) continue;
                const std::size_t s = std::size_t(source[i]);
                if (s >= n_) throw InvalidParameter("reindex source out of range");
                for (std::size_t k = 0; k < g.width; ++k) {
                    m[i * g.width + k] = g.m[s * g.width + k];
                    v[i * g.width + k] = g.v[s * g.width + k];
                }
            }
            g.m = std::move(m);
            g.v = std::move(v);
        }
        n_ = source.size();
    }

    /// Applies one step. `d_mask_logits` may be empty when masks are not trained.
    /// Throws std::runtime_error on any non-finite gradient, before touching parameters.
    template <std::floating_point T>
    void step(GaussianCloud<T> &cloud, const GradientSet<T> &grads, std::span<const std::array<T, 2>> d_mask_logits,
              const LearningRates &lr, double extent) {
        if (cloud.size() != n_) throw InvalidParameter("optimizer state does not match cloud size");
        grads.check_finite();
        for (std::size_t i = 0; i < d_mask_logits.size(); ++i)
            if (!std::isfinite(d_mask_logits[i][0]) || !std::isfinite(d_mask_logits[i][1]))
                throw std::runtime_error("non-finite gradient in mask_logits at index " + std::to_string(i));
        ++step_;
        bias1_ = 1.0 - std::pow(hyper.beta1, double(step_));
        bias2_ = 1.0 - std::pow(hyper.beta2, double(step_));
        const std::size_t stride = cloud.sh_stride();
        const double lr_pos = lr.position_at(step_ - 1, extent);
        for (std::size_t i = 0; i < n_; ++i) {
            for (int k = 0; k < 3; ++k) update(ParamGroup::position, i, k, cloud.centers[i][k], grads.d_centers[i][k], lr_pos);
            T *sh = cloud.sh.data() + i * stride;
            const T *gsh = grads.d_sh.data() + i * stride;
            for (int k = 0; k < 3; ++k) update(ParamGroup::sh_dc, i, k, sh[k], gsh[k], lr.sh_dc);
            for (std::size_t k = 3; k < stride; ++k) update(ParamGroup::sh_rest, i, k - 3, sh[k], gsh[k], lr.sh_rest);
            update(ParamGroup::opacity, i, 0, cloud.opacity_logits[i], grads.d_opacity_logits[i], lr.opacity);
            for (int k = 0; k < 3; ++k) update(ParamGroup::scale, i, k, cloud.log_scales[i][k], grads.d_log_scales[i][k], lr.scale);
            for (int k = 0; k < 4; ++k) update(ParamGroup::rotation, i, k, cloud.rotations[i][k], grads.d_rotations[i][k], lr.rotation);
            cloud.rotations[i].normalize();
            if (!d_mask_logits.empty()) {
                for (int k = 0; k < 2; ++k) update(ParamGroup::mask, i, k, cloud.mask_logits[i][k], d_mask_logits[i][k], lr.mask);
            }
        }
    }

  private:
    struct Group {
        std::size_t width = 0;
        std::vector<double> m, v;
    };
    std::array<Group, kParamGroupCount> groups_{};
    std::size_t n_ = 0;
    std::uint64_t step_ = 0;
    double bias1_ = 1.0, bias2_ = 1.0;

    void resize_for(std::size_t n, std::size_t sh_stride) {
        const std::array<std::size_t, kParamGroupCount> widths = {3, 3, sh_stride - 3, 1, 3, 4, 2};
        for (std::size_t g = 0; g < kParamGroupCount; ++g) {
            groups_[g].width = widths[g];
            groups_[g].m.assign(n * widths[g], 0.0);
            groups_[g].v.assign(n * widths[g], 0.0);
        }
        n_ = n;
    }

    template <std::floating_point T>
    void update(ParamGroup group, std::size_t i, std::size_t k, T &x, T g, double lr) {
        Group &gr = groups_[std::size_t(group)];
        const std::size_t idx = i * gr.width + k;
        const double gd = double(g);
        double &m = gr.m[idx];
        double &v = gr.v[idx];
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * gd;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * gd * gd;
        x = T(double(x) - lr * (m / bias1_) / (std::sqrt(v / bias2_) + hyper.eps));
    }
};

} // namespace maskraster
