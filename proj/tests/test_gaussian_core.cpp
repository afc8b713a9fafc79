// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <numbers>

using namespace maskraster;
using namespace testing_support;

TEST(BuildCovariance, IdentityQuaternionUnitScales) {
    const Mat3<double> s = build_covariance<double>(Vec4<double>(1, 0, 0, 0), Vec3<double>::Zero());
    EXPECT_TRUE(s.isApprox(Mat3<double>::Identity(), 1e-15));
}

TEST(BuildCovariance, AxisAlignedScaling) {
    const Mat3<double> s = build_covariance<double>(Vec4<double>(1, 0, 0, 0), Vec3<double>(std::log(2.0), 0, 0));
    EXPECT_NEAR(s(0, 0), 4.0, 1e-14);
    EXPECT_NEAR(s(1, 1), 1.0, 1e-14);
    EXPECT_NEAR(s(2, 2), 1.0, 1e-14);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
}

TEST(BuildCovariance, QuarterTurnAboutZMatchesDirectProduct) {
    const double h = std::sqrt(0.5);
    const Vec4<double> q(h, 0, 0, h);
    const Mat3<double> got = build_covariance<double>(q, Vec3<double>(std::log(2.0), 0, 0));
    // Direct 3x3 products with a hand-written rotation matrix.
    double r[3][3] = {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}};
    double sd[3] = {2, 1, 1};
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += r[a][k] * sd[k] * sd[k] * r[b][k];
            EXPECT_NEAR(got(a, b), acc, 1e-12);
        }
    }
    EXPECT_NEAR(got(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(got(1, 1), 4.0, 1e-12);
}

TEST(BuildCovariance, ZeroQuaternionThrows) {
    EXPECT_THROW(build_covariance<double>(Vec4<double>::Zero(), Vec3<double>::Zero()), InvalidParameter);
}

TEST(BuildCovariance, SignFlipInvariantAndEigenvaluesAreSquaredScales) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 200; ++trial) {
        const Vec4<double> q(n01(rng), n01(rng), n01(rng), n01(rng));
        const Vec3<double> ls(n01(rng), n01(rng), n01(rng));
        const Mat3<double> a = build_covariance<double>(q, ls);
        const Mat3<double> b = build_covariance<double>(-q, ls);
        EXPECT_EQ(a, b);
        EXPECT_TRUE(a.isApprox(a.transpose(), 1e-14));
        Eigen::SelfAdjointEigenSolver<Mat3<double>> es(a);
        std::array<double, 3> want = {std::exp(2 * ls[0]), std::exp(2 * ls[1]), std::exp(2 * ls[2])};
        std::sort(want.begin(), want.end());
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(es.eigenvalues()[k], want[std::size_t(k)], 1e-10 * want[2]);
    }
}

TEST(Quaternion, NormalizedRotationIsOrthonormal) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 100; ++trial) {
        const Vec4<double> q(n01(rng), n01(rng), n01(rng), n01(rng));
        const Mat3<double> r = quaternion_to_rotation(q);
        EXPECT_LT((r * r.transpose() - Mat3<double>::Identity()).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-6);
    }
}

TEST(GaussianCloud, ActivationsStayInRange) {
    const auto c = random_cloud(5, 50);
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_GT(c.opacity(i), 0.0);
        EXPECT_LT(c.opacity(i), 1.0);
        EXPECT_GT(c.scales(i).minCoeff(), 0.0);
    }
    EXPECT_NO_THROW(c.validate());
}

TEST(GaussianCloud, ValidateRejectsMismatchedArrays) {
    auto c = random_cloud(5, 4);
    c.opacity_logits.pop_back();
    EXPECT_THROW(c.validate(), InvalidParameter);
    auto d = random_cloud(5, 4);
    d.rotations[2].setZero();
    EXPECT_THROW(d.validate(), InvalidParameter);
}

TEST(Camera, ValidateRejectsBadIntrinsicsAndRotation) {
    auto c = axis_camera();
    EXPECT_NO_THROW(c.validate());
    c.fx = 0;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = axis_camera();
    c.rotation(0, 0) = 1.1;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = axis_camera();
    c.width = 0;
    EXPECT_THROW(c.validate(), InvalidParameter);
}

TEST(ProjectSplat, OnAxisProjectsToPrincipalPoint) {
    Camera<double> cam;
    cam.width = cam.height = 100;
    cam.fx = cam.fy = 100;
    cam.cx = cam.cy = 50;
    GaussianCloud<double> c = empty_cloud();
    add_axis_splat(c, 1.0, 0.5, {1, 0, 0});
    const auto s = project_splat<double>(0, c, cam);
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->mean2d[0], 50.0, 1e-12);
    EXPECT_NEAR(s->mean2d[1], 50.0, 1e-12);
    EXPECT_NEAR(s->depth, 1.0, 1e-15);
}

TEST(ProjectSplat, IsotropicCovarianceMatchesNumericJacobian) {
    Camera<double> cam;
    cam.width = cam.height = 100;
    cam.fx = 120;
    cam.fy = 90;
    cam.cx = cam.cy = 50;
    const double sigma = 0.05;
    for (const Vec3<double> p : {Vec3<double>(0, 0, 2), Vec3<double>(0.3, -0.2, 3)}) {
        GaussianCloud<double> c = empty_cloud();
        add_axis_splat(c, 1.0, 0.5, {1, 1, 1}, std::log(sigma));
        c.centers[0] = p;
        const auto s = project_splat<double>(0, c, cam);
        ASSERT_TRUE(s.has_value());
        // Oracle: central-difference Jacobian of the pixel projection.
        auto proj = [&](const Vec3<double> &x) {
            return Vec2<double>(cam.fx * x[0] / x[2] + cam.cx, cam.fy * x[1] / x[2] + cam.cy);
        };
        Eigen::Matrix<double, 2, 3> j;
        for (int k = 0; k < 3; ++k) {
            Vec3<double> e = Vec3<double>::Zero();
            e[k] = 1e-6;
            j.col(k) = (proj(p + e) - proj(p - e)) / 2e-6;
        }
        Mat2<double> want = sigma * sigma * j * j.transpose();
        want(0, 0) += 0.3;
        want(1, 1) += 0.3;
        Mat2<double> conic;
        conic << s->conic[0], s->conic[1], s->conic[1], s->conic[2];
        const Mat2<double> got = conic.inverse();
        EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-6 * want.cwiseAbs().maxCoeff());
        if (p[0] == 0) EXPECT_NEAR(got(0, 0), std::pow(cam.fx * sigma / p[2], 2) + 0.3, 1e-9);
    }
}

TEST(ProjectSplat, BehindNearClipIsAbsent) {
    GaussianCloud<double> c = empty_cloud();
    add_axis_splat(c, 0.005, 0.5, {1, 1, 1});
    add_axis_splat(c, -1.0, 0.5, {1, 1, 1});
    SkipReason why{};
    EXPECT_FALSE(project_splat<double>(0, c, axis_camera(), {}, &why).has_value());
    EXPECT_EQ(why, SkipReason::behind_near_clip);
    EXPECT_FALSE(project_splat<double>(1, c, axis_camera()).has_value());
}

TEST(ProjectSplat, FarOffscreenAndTransparentAreSkipped) {
    GaussianCloud<double> c = empty_cloud();
    add_axis_splat(c, 1.0, 0.5, {1, 1, 1});
    c.centers[0] = Vec3<double>(50, 0, 1);
    add_axis_splat(c, 1.0, 0.002, {1, 1, 1});
    SkipReason why{};
    EXPECT_FALSE(project_splat<double>(0, c, axis_camera(), {}, &why).has_value());
    EXPECT_EQ(why, SkipReason::off_screen);
    EXPECT_FALSE(project_splat<double>(1, c, axis_camera(), {}, &why).has_value());
    EXPECT_EQ(why, SkipReason::transparent);
}

TEST(ProjectSplat, FootprintCoversEveryPixelAboveCutoff) {
    const auto c = random_cloud(21, 40, 0);
    const auto cam = scene_camera(48, 40);
    const RasterConfig rc;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto s = project_splat<double>(i, c, cam, rc);
        if (!s) continue;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                if (eval_alpha(*s, Vec2<double>(x, y), rc) < rc.alpha_min) continue;
                EXPECT_LE(std::abs(x - s->mean2d[0]), s->radius);
                EXPECT_LE(std::abs(y - s->mean2d[1]), s->radius);
            }
    }
}

TEST(EvalSh, DegreeZeroIsViewIndependent) {
    const std::vector<double> coeffs = {0.7, -0.3, 1.1};
    for (const Vec3<double> d : {Vec3<double>(0, 0, 1), Vec3<double>(1, 0, 0), Vec3<double>(0.6, -0.8, 0)}) {
        const Vec3<double> rgb = eval_sh<double>(coeffs, d, 0);
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(rgb[ch], 0.5 + coeffs[std::size_t(ch)] * sh_constants::c0, 1e-15);
    }
}

TEST(EvalSh, ZeroCoefficientsGiveMidGray) {
    const std::vector<double> coeffs(48, 0.0);
    const Vec3<double> rgb = eval_sh<double>(coeffs, Vec3<double>(0.3, 0.4, -0.5).normalized(), 3);
    EXPECT_EQ(rgb, Vec3<double>::Constant(0.5));
}

TEST(EvalSh, DegreeOneAntipodalMirror) {
    std::vector<double> coeffs(12, 0.0);
    coeffs[3] = 0.2;  // Y_1 red
    coeffs[7] = -0.1; // Y_2 green
    coeffs[11] = 0.15; // Y_3 blue
    const Vec3<double> d = Vec3<double>(0.2, -0.5, 0.7).normalized();
    const Vec3<double> a = eval_sh<double>(coeffs, d, 1);
    const Vec3<double> b = eval_sh<double>(coeffs, -d, 1);
    for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(a[ch] + b[ch], 1.0, 1e-15);
    // Direct basis polynomials.
    const double c1 = 0.4886025119029199;
    EXPECT_NEAR(a[0], 0.5 + 0.2 * (-c1 * d[1]), 1e-15);
    EXPECT_NEAR(a[1], 0.5 - 0.1 * (c1 * d[2]), 1e-15);
    EXPECT_NEAR(a[2], 0.5 + 0.15 * (-c1 * d[0]), 1e-15);
}

TEST(EvalSh, ClampsNegativeChannels) {
    const std::vector<double> coeffs = {-5.0, 0.0, 5.0};
    const Vec3<double> rgb = eval_sh<double>(coeffs, Vec3<double>(0, 0, 1), 0);
    EXPECT_EQ(rgb[0], 0.0);
    EXPECT_EQ(rgb[1], 0.5);
}

TEST(EvalSh, DegenerateDirectionIsRenormalized) {
    std::vector<double> coeffs(12, 0.1);
    const Vec3<double> rgb = eval_sh<double>(coeffs, Vec3<double>::Zero(), 1);
    EXPECT_TRUE(rgb.allFinite());
    const Vec3<double> scaled = eval_sh<double>(coeffs, Vec3<double>(0, 0, 7), 1);
    const Vec3<double> unit = eval_sh<double>(coeffs, Vec3<double>(0, 0, 1), 1);
    EXPECT_TRUE(scaled.isApprox(unit, 1e-15));
}

TEST(EvalSh, BasisIsOrthonormalOnTheSphere) {
    // Fibonacci-lattice quadrature of Y_k·Y_l over the unit sphere.
    const int n = 40000;
    std::array<std::array<double, 16>, 16> gram{};
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double r = std::sqrt(1.0 - z * z);
        const Vec3<double> d(r * std::cos(golden * i), r * std::sin(golden * i), z);
        const auto y = sh_basis(d, 3);
        for (int a = 0; a < 16; ++a)
            for (int b = 0; b < 16; ++b) gram[std::size_t(a)][std::size_t(b)] += y[std::size_t(a)] * y[std::size_t(b)];
    }
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b)
            EXPECT_NEAR(gram[std::size_t(a)][std::size_t(b)] * 4.0 * std::numbers::pi / n, a == b ? 1.0 : 0.0, 2e-3)
                << a << "," << b;
}

TEST(EvalSh, BasisJacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3<double> d = Vec3<double>(n01(rng), n01(rng), n01(rng)).normalized();
        std::array<double, 16> vals{};
        std::array<Vec3<double>, 16> grads{};
        sh_basis_with_jacobian(d, 3, vals, grads);
        for (int k = 0; k < 3; ++k) {
            Vec3<double> e = Vec3<double>::Zero();
            e[k] = 1e-6;
            std::array<double, 16> up{}, dn{};
            detail::fill_sh_basis<double, double>(d[0] + e[0], d[1] + e[1], d[2] + e[2], 3, up);
            detail::fill_sh_basis<double, double>(d[0] - e[0], d[1] - e[1], d[2] - e[2], 3, dn);
            for (int b = 0; b < 16; ++b)
                EXPECT_NEAR(grads[std::size_t(b)][k], (up[std::size_t(b)] - dn[std::size_t(b)]) / 2e-6, 1e-8);
        }
    }
}

TEST(EvalAlpha, CenterGivesOpacity) {
    Splat2D<double> s;
    s.mean2d = Vec2<double>(3, 4);
    s.conic = Vec3<double>(1, 0, 1);
    s.opacity = 0.5;
    EXPECT_EQ(eval_alpha(s, Vec2<double>(3, 4)), 0.5);
}

TEST(EvalAlpha, HalfMaximumOffset) {
    Splat2D<double> s;
    s.conic = Vec3<double>(1, 0, 1);
    s.opacity = 1.0;
    RasterConfig rc;
    rc.alpha_max = 1.0;
    EXPECT_NEAR(eval_alpha(s, Vec2<double>(std::sqrt(2 * std::log(2.0)), 0), rc), 0.5, 1e-15);
}

TEST(EvalAlpha, ClampAtCenterForFullOpacity) {
    Splat2D<double> s;
    s.conic = Vec3<double>(1, 0, 1);
    s.opacity = 1.0;
    EXPECT_EQ(eval_alpha(s, Vec2<double>(0, 0)), 0.99);
}

TEST(EvalAlpha, MonotoneInMahalanobisDistance) {
    Splat2D<double> s;
    s.conic = Vec3<double>(0.7, 0.2, 0.4);
    s.opacity = 0.8;
    const Vec2<double> dir = Vec2<double>(0.6, -0.8);
    double prev = 2.0;
    for (int k = 0; k < 200; ++k) {
        const double a = eval_alpha(s, Vec2<double>(dir * (0.05 * k)));
        EXPECT_LE(a, prev);
        prev = a;
    }
}

TEST(EvalAlpha, ProjectedCenterGivesClampedOpacity) {
    for (const double o : {0.2, 0.7, 0.995}) {
        GaussianCloud<double> c = empty_cloud();
        add_axis_splat(c, 2.0, o, {1, 1, 1}, std::log(0.1));
        const auto s = project_splat<double>(0, c, axis_camera());
        ASSERT_TRUE(s.has_value());
        EXPECT_NEAR(eval_alpha(*s, s->mean2d), std::min(o, 0.99), 1e-12);
    }
}

// α at a fixed pixel as a function of one Gaussian's 3D parameters.
namespace {
double
alpha_at(const GaussianCloud<double> &c, const Camera<double> &cam, const Vec2<double> &px) {
    const auto s = project_splat<double>(0, c, cam);
    return s ? eval_alpha(*s, px) : 0.0;
}
} // namespace

TEST(EvalAlpha, ThreeDimensionalGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01;
    const auto cam = scene_camera(32, 32);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        GaussianCloud<double> c = random_cloud(1000 + trial, 1, 0, 0.9);
        const auto s = project_splat<double>(0, c, cam);
        if (!s) continue;
        const Vec2<double> px = s->mean2d + Vec2<double>(n01(rng), n01(rng)) * 0.5 * std::sqrt(s->radius);
        const double a0 = eval_alpha(*s, px);
        if (a0 < 1e-3 || a0 > 0.98) continue;
        const AlphaGrad<double> ag = backward_alpha_chain(1.0, *s, px);
        GradientSet<double> g = GradientSet<double>::zeros(c);
        const Vec3<double> no_color = Vec3<double>::Zero();
        backward_projection_chain<double>(ag.d_mean2d, ag.d_conic, no_color, ag.d_opacity, *s, c, cam, g);
        auto check = [&](double &param, double analytic) {
            const double h = 1e-6 * std::max(1.0, std::abs(param));
            const double keep = param;
            param = keep + h;
            const double up = alpha_at(c, cam, px);
            param = keep - h;
            const double dn = alpha_at(c, cam, px);
            param = keep;
            const double numeric = (up - dn) / (2 * h);
            EXPECT_LT(relative_error(analytic, numeric, 1e-4), 1e-4) << "trial " << trial;
        };
        for (int k = 0; k < 3; ++k) check(c.centers[0][k], g.d_centers[0][k]);
        for (int k = 0; k < 3; ++k) check(c.log_scales[0][k], g.d_log_scales[0][k]);
        for (int k = 0; k < 4; ++k) check(c.rotations[0][k], g.d_rotations[0][k]);
        check(c.opacity_logits[0], g.d_opacity_logits[0]);
        ++checked;
    }
    EXPECT_GT(checked, 50);
}

TEST(QuaternionGradient, OrthogonalToQuaternion) {
    const auto cam = scene_camera(32, 32);
    const auto c = random_cloud(9, 1, 0, 0.9);
    const auto s = project_splat<double>(0, c, cam);
    ASSERT_TRUE(s.has_value());
    const AlphaGrad<double> ag = backward_alpha_chain<double>(1.0, *s, Vec2<double>(s->mean2d + Vec2<double>(0.7, -0.4)));
    GradientSet<double> g = GradientSet<double>::zeros(c);
    const Vec3<double> no_color = Vec3<double>::Zero();
        backward_projection_chain<double>(ag.d_mean2d, ag.d_conic, no_color, ag.d_opacity, *s, c, cam, g);
    EXPECT_NEAR(g.d_rotations[0].dot(c.rotations[0]), 0.0, 1e-12 * std::max(1.0, g.d_rotations[0].norm()));
}
