// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/gaussian.hpp"

#include <algorithm>
#include <array>
#include <cassert>

namespace maskraster {

namespace sh_constants {
inline constexpr double c0 = 0.28209479177387814;
inline constexpr double c1 = 0.4886025119029199;
inline constexpr std::array<double, 5> c2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                             -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> c3 = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                             -0.5900435899266435};
} // namespace sh_constants

namespace detail {

// Forward-mode dual number with a 3-vector tangent; only what the SH basis needs.
template <class T> struct Dual3 {
    T v{};
    Vec3<T> d = Vec3<T>::Zero();
};
template <class T> Dual3<T> operator+(const Dual3<T> &a, const Dual3<T> &b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual3<T> operator-(const Dual3<T> &a, const Dual3<T> &b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual3<T> operator*(const Dual3<T> &a, const Dual3<T> &b) {
    return {a.v * b.v, a.d * b.v + b.d * a.v};
}
template <class T> Dual3<T> operator*(T s, const Dual3<T> &a) { return {s * a.v, s * a.d}; }

// Real SH basis in the 3DGS sign convention, generic over plain scalars and duals.
template <class S, class T>
void
fill_sh_basis(const S &x, const S &y, const S &z, int degree, std::array<S, 16> &out) {
    using namespace sh_constants;
    out[0] = S{T(c0)};
    if (degree < 1) return;
    out[1] = T(-c1) * y;
    out[2] = T(c1) * z;
    out[3] = T(-c1) * x;
    if (degree < 2) return;
    const S xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
    out[4] = T(c2[0]) * xy;
    out[5] = T(c2[1]) * yz;
    out[6] = T(c2[2]) * (T(2) * zz - xx - yy);
    out[7] = T(c2[3]) * xz;
    out[8] = T(c2[4]) * (xx - yy);
    if (degree < 3) return;
    out[9] = T(c3[0]) * (y * (T(3) * xx - yy));
    out[10] = T(c3[1]) * (xy * z);
    out[11] = T(c3[2]) * (y * (T(4) * zz - xx - yy));
    out[12] = T(c3[3]) * (z * (T(2) * zz - T(3) * xx - T(3) * yy));
    out[13] = T(c3[4]) * (x * (T(4) * zz - xx - yy));
    out[14] = T(c3[5]) * (z * (xx - yy));
    out[15] = T(c3[6]) * (x * (xx - T(3) * yy));
}

} // namespace detail

/// Renormalizes a view direction; a zero vector maps to +z.
template <std::floating_point T>
Vec3<T>
safe_direction(const Vec3<T> &dir) {
    const T n = dir.norm();
    if (!(n > T(0))) return Vec3<T>(0, 0, 1);
    return dir / n;
}

/// Basis values Y_k(dir) for k < sh_basis_count(degree).
template <std::floating_point T>
std::array<T, 16>
sh_basis(const Vec3<T> &dir, int degree) {
    std::array<T, 16> out{};
    detail::fill_sh_basis<T, T>(dir[0], dir[1], dir[2], degree, out);
    return out;
}

/// Basis values and their gradients with respect to the (unit) direction components.
template <std::floating_point T>
void
sh_basis_with_jacobian(const Vec3<T> &dir, int degree, std::array<T, 16> &values, std::array<Vec3<T>, 16> &grads) {
    using D = detail::Dual3<T>;
    D x{dir[0], Vec3<T>::UnitX()}, y{dir[1], Vec3<T>::UnitY()}, z{dir[2], Vec3<T>::UnitZ()};
    std::array<D, 16> out{};
    detail::fill_sh_basis<D, T>(x, y, z, degree, out);
    for (int k = 0; k < 16; ++k) {
        values[k] = out[k].v;
        grads[k] = out[k].d;
    }
}

/// Raw (unclamped) SH color including the +0.5 offset.
template <std::floating_point T>
Vec3<T>
eval_sh_unclamped(std::span<const T> coeffs, const Vec3<T> &view_dir, int degree) {
    const int count = sh_basis_count(degree);
    assert(coeffs.size() >= std::size_t(3 * count));
    const auto basis = sh_basis(safe_direction(view_dir), degree);
    Vec3<T> rgb = Vec3<T>::Constant(T(0.5));
    for (int k = 0; k < count; ++k) {
        rgb[0] += basis[k] * coeffs[3 * k + 0];
        rgb[1] += basis[k] * coeffs[3 * k + 1];
        rgb[2] += basis[k] * coeffs[3 * k + 2];
    }
    return rgb;
}

/// View-dependent color: SH expansion plus 0.5, clamped to be non-negative.
template <std::floating_point T>
Vec3<T>
eval_sh(std::span<const T> coeffs, const Vec3<T> &view_dir, int degree) {
    return eval_sh_unclamped(coeffs, view_dir, degree).cwiseMax(T(0));
}

} // namespace maskraster
