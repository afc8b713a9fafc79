// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskraster {

template <class T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <class T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <class T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <class T> using Mat3 = Eigen::Matrix<T, 3, 3>;

/// Raised for parameter values outside a function's domain (zero quaternion,
/// non-positive intrinsics, mismatched array lengths...).
class InvalidParameter : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

template <std::floating_point T>
inline T
sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <std::floating_point T>
inline T
inverse_sigmoid(T p) {
    return std::log(p / (T(1) - p));
}

/// Number of SH basis functions per color channel for degree D.
constexpr int
sh_basis_count(int degree) {
    return (degree + 1) * (degree + 1);
}

/// Rotation matrix of a (w, x, y, z) quaternion. The quaternion is normalized first.
template <std::floating_point T>
Mat3<T>
quaternion_to_rotation(const Vec4<T> &q) {
    const T norm = q.norm();
    if (!(norm > T(0)) || !std::isfinite(norm)) {
        throw InvalidParameter("quaternion must have nonzero finite norm");
    }
    const T w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

/// World-space covariance R·diag(s)²·Rᵀ with s = exp(log_scales).
template <std::floating_point T>
Mat3<T>
build_covariance(const Vec4<T> &rotation, const Vec3<T> &log_scales) {
    const Mat3<T> r = quaternion_to_rotation(rotation);
    const Vec3<T> s = log_scales.array().exp().matrix();
    const Mat3<T> m = r * s.asDiagonal();
    Mat3<T> cov = m * m.transpose();
    // Exact symmetry regardless of summation order.
    cov = T(0.5) * (cov + cov.transpose()).eval();
    return cov;
}

/// Array-of-records storage for a set of 3D Gaussians. Opacity and scale are kept
/// as unconstrained logits/logs; activations are applied at read time.
template <std::floating_point T> struct GaussianCloud {
    int sh_degree = 3;
    std::vector<Vec3<T>> centers;
    std::vector<T> opacity_logits;
    std::vector<Vec3<T>> log_scales;
    std::vector<Vec4<T>> rotations; // (w, x, y, z)
    // Per Gaussian: sh_basis_count(sh_degree) coefficients, each an RGB triple.
    std::vector<T> sh;
    // (present, absent) scores.
    std::vector<std::array<T, 2>> mask_logits;

    [[nodiscard]] std::size_t size() const { return centers.size(); }
    [[nodiscard]] bool empty() const { return centers.empty(); }
    [[nodiscard]] int coeffs_per_channel() const { return sh_basis_count(sh_degree); }
    [[nodiscard]] std::size_t sh_stride() const { return std::size_t(3 * coeffs_per_channel()); }

    [[nodiscard]] std::span<const T> sh_of(std::size_t i) const {
        return {sh.data() + i * sh_stride(), sh_stride()};
    }
    [[nodiscard]] std::span<T> sh_of(std::size_t i) { return {sh.data() + i * sh_stride(), sh_stride()}; }

    [[nodiscard]] T opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
    [[nodiscard]] Vec3<T> scales(std::size_t i) const { return log_scales[i].array().exp().matrix(); }

    void resize(std::size_t n) {
        centers.resize(n, Vec3<T>::Zero());
        opacity_logits.resize(n, T(0));
        log_scales.resize(n, Vec3<T>::Zero());
        rotations.resize(n, Vec4<T>(1, 0, 0, 0));
        sh.resize(n * sh_stride(), T(0));
        mask_logits.resize(n, {T(3), T(0)});
    }

    /// Appends a copy of Gaussian `i` of `other` (same SH degree required).
    void push_back_from(const GaussianCloud &other, std::size_t i) {
        centers.push_back(other.centers[i]);
        opacity_logits.push_back(other.opacity_logits[i]);
        log_scales.push_back(other.log_scales[i]);
        rotations.push_back(other.rotations[i]);
        const auto src = other.sh_of(i);
        sh.insert(sh.end(), src.begin(), src.end());
        mask_logits.push_back(other.mask_logits[i]);
    }

    /// Keeps only the listed Gaussians, in the listed order.
    [[nodiscard]] GaussianCloud select(std::span<const std::size_t> keep) const {
        GaussianCloud out;
        out.sh_degree = sh_degree;
        out.centers.reserve(keep.size());
        for (const std::size_t i : keep) {
            out.push_back_from(*this, i);
        }
        return out;
    }

    /// Throws InvalidParameter when array lengths disagree or a quaternion is zero.
    void validate() const {
        const std::size_t n = size();
        if (sh_degree < 0 || sh_degree > 3) {
            throw InvalidParameter("sh_degree must be in [0, 3]");
        }
        if (opacity_logits.size() != n || log_scales.size() != n || rotations.size() != n ||
            mask_logits.size() != n || sh.size() != n * sh_stride()) {
            throw InvalidParameter("GaussianCloud arrays do not share leading dimension " + std::to_string(n));
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!(rotations[i].norm() > T(0))) {
                throw InvalidParameter("Gaussian " + std::to_string(i) + " has a zero quaternion");
            }
        }
    }

    template <std::floating_point U> [[nodiscard]] GaussianCloud<U> cast() const {
        GaussianCloud<U> out;
        out.sh_degree = sh_degree;
        out.centers.reserve(size());
        for (const auto &c : centers) out.centers.push_back(c.template cast<U>());
        for (const auto &o : opacity_logits) out.opacity_logits.push_back(U(o));
        for (const auto &s : log_scales) out.log_scales.push_back(s.template cast<U>());
        for (const auto &q : rotations) out.rotations.push_back(q.template cast<U>());
        for (const auto &v : sh) out.sh.push_back(U(v));
        for (const auto &m : mask_logits) out.mask_logits.push_back({U(m[0]), U(m[1])});
        return out;
    }
};

/// Pinhole camera; camera space is x right, y down, z forward.
template <std::floating_point T> struct Camera {
    int width = 1;
    int height = 1;
    T fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3<T> rotation = Mat3<T>::Identity(); // world -> camera
    Vec3<T> translation = Vec3<T>::Zero();
    T near_clip = T(0.01);

    [[nodiscard]] Vec3<T> to_camera(const Vec3<T> &p) const { return rotation * p + translation; }
    [[nodiscard]] Vec3<T> position() const { return -(rotation.transpose() * translation); }

    void validate() const {
        if (width < 1 || height < 1) throw InvalidParameter("camera width/height must be >= 1");
        if (!(fx > 0) || !(fy > 0)) throw InvalidParameter("camera focal lengths must be positive");
        const Mat3<T> should_be_identity = rotation * rotation.transpose();
        if (!((should_be_identity - Mat3<T>::Identity()).cwiseAbs().maxCoeff() <= T(1e-6))) {
            throw InvalidParameter("camera rotation is not orthonormal");
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up direction.
    static Camera look_at(const Vec3<T> &eye, const Vec3<T> &target, const Vec3<T> &up, int width, int height,
                          T focal) {
        const Vec3<T> forward = (target - eye).normalized();
        Vec3<T> right = forward.cross(up);
        if (right.norm() < T(1e-9)) {
            right = forward.unitOrthogonal();
        }
        right.normalize();
        const Vec3<T> down = forward.cross(right);
        Camera cam;
        cam.width = width;
        cam.height = height;
        cam.fx = cam.fy = focal;
        cam.cx = T(width) / T(2);
        cam.cy = T(height) / T(2);
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = forward.transpose();
        cam.translation = -(cam.rotation * eye);
        return cam;
    }

    template <std::floating_point U> [[nodiscard]] Camera<U> cast() const {
        Camera<U> out;
        out.width = width;
        out.height = height;
        out.fx = U(fx);
        out.fy = U(fy);
        out.cx = U(cx);
        out.cy = U(cy);
        out.rotation = rotation.template cast<U>();
        out.translation = translation.template cast<U>();
        out.near_clip = U(near_clip);
        return out;
    }
};

} // namespace maskraster
