// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace maskraster;
using Logits = std::array<double, 2>;

namespace {

std::vector<Logits>
repeat(const Logits &l, std::size_t n) {
    return std::vector<Logits>(n, l);
}

double
mean_hard(const MaskSample<double> &s) {
    return double(s.count_on()) / double(s.size());
}

} // namespace

TEST(ExistenceProb, Examples) {
    EXPECT_EQ(existence_prob<double>(Logits{0, 0}), 0.5);
    EXPECT_NEAR(existence_prob<double>(Logits{std::log(3.0), 0}), 0.75, 1e-15);
    EXPECT_NEAR(existence_prob<double>(Logits{20, -20}), 1.0, 1e-12);
}

TEST(ExistenceProb, MatchesTwoWaySoftmax) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01(0, 3);
    std::vector<Logits> ls;
    for (int i = 0; i < 100; ++i) ls.push_back({n01(rng), n01(rng)});
    const auto p = existence_prob<double>(ls);
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const double e0 = std::exp(ls[i][0]), e1 = std::exp(ls[i][1]);
        EXPECT_NEAR(p[i], e0 / (e0 + e1), 1e-14);
        EXPECT_GT(p[i], 0.0);
        EXPECT_LT(p[i], 1.0);
    }
}

TEST(SampleMasks, SaturatedLogitsAlwaysPresent) {
    const auto ls = repeat({30, -30}, 10000);
    for (const double tau : {0.01, 0.5, 5.0}) {
        const auto s = sample_masks<double>(ls, tau, std::uint64_t(4));
        EXPECT_EQ(s.count_on(), ls.size());
    }
}

TEST(SampleMasks, SymmetricLogitsGiveFairCoin) {
    const auto s = sample_masks<double>(repeat({0, 0}, 100000), 0.5, std::uint64_t(17));
    EXPECT_NEAR(mean_hard(s), 0.5, 0.005);
}

TEST(SampleMasks, AgreesWithDirectCategoricalSampler) {
    const double p = 0.75;
    const auto s = sample_masks<double>(repeat({std::log(3.0), 0}, 100000), 0.5, std::uint64_t(23));
    EXPECT_NEAR(mean_hard(s), p, 0.0045);
    // Independent oracle: inverse-CDF categorical draws.
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0, 1);
    std::size_t on = 0;
    for (int i = 0; i < 100000; ++i) on += u(rng) < p;
    const double direct = double(on) / 1e5;
    // Two independent binomial means: difference has sd sqrt(2 p (1-p) / n).
    EXPECT_LT(std::abs(mean_hard(s) - direct), 4.0 * std::sqrt(2 * p * (1 - p) / 1e5));
}

TEST(SampleMasks, InvariantsOnSoftAndHard) {
    std::mt19937_64 g(5);
    std::normal_distribution<double> n01(0, 2);
    std::vector<Logits> ls;
    for (int i = 0; i < 5000; ++i) ls.push_back({n01(g), n01(g)});
    const auto s = sample_masks<double>(ls, 0.5, std::uint64_t(8));
    EXPECT_TRUE(s.pass_through);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_TRUE(s.hard[i] == 0.0 || s.hard[i] == 1.0);
        EXPECT_GE(s.soft[i], 0.0);
        EXPECT_LE(s.soft[i], 1.0);
        // hard is the argmax of the same perturbation the soft value is built from.
        if (s.soft[i] > 0.5) EXPECT_EQ(s.hard[i], 1.0);
        if (s.soft[i] < 0.5) EXPECT_EQ(s.hard[i], 0.0);
    }
}

TEST(SampleMasks, ConvergesToExistenceProbability) {
    for (const Logits l : {Logits{1.0, 0.0}, Logits{-0.7, 0.4}, Logits{2.5, 1.0}}) {
        const std::size_t n = 20000;
        const double p = existence_prob(l);
        const auto s = sample_masks<double>(repeat(l, n), 0.5, std::uint64_t(31));
        EXPECT_LT(std::abs(mean_hard(s) - p), 3.0 * std::sqrt(p * (1 - p) / double(n)) + 1e-3);
    }
}

TEST(SampleMasks, LowTemperatureSoftApproachesHard) {
    const auto s = sample_masks<double>(repeat({2, 0}, 10000), 0.01, std::uint64_t(3));
    double gap = 0;
    for (std::size_t i = 0; i < s.size(); ++i) gap += std::abs(s.soft[i] - s.hard[i]);
    EXPECT_LT(gap / double(s.size()), 0.05);
}

TEST(SampleMasks, SlopeIsDerivativeOfSoft) {
    // soft = sigmoid((z0 + g0 - z1 - g1) / tau); finite-difference z0 with the noise held fixed.
    const double tau = 0.5;
    const std::vector<Logits> ls = {{0.3, -0.2}, {1.5, 0.1}, {-1.0, 0.0}};
    const auto base = sample_masks<double>(ls, tau, std::uint64_t(12));
    for (std::size_t i = 0; i < ls.size(); ++i) {
        auto up = ls, dn = ls;
        up[i][0] += 1e-6;
        dn[i][0] -= 1e-6;
        const double fd =
            (sample_masks<double>(up, tau, std::uint64_t(12)).soft[i] - sample_masks<double>(dn, tau, std::uint64_t(12)).soft[i]) / 2e-6;
        EXPECT_NEAR(base.slope[i], fd, 1e-7);
    }
}

TEST(SampleMasks, NonPositiveTemperatureThrows) {
    const auto ls = repeat({0, 0}, 3);
    EXPECT_THROW(sample_masks<double>(ls, 0.0, std::uint64_t(1)), InvalidParameter);
    EXPECT_THROW(sample_masks<double>(ls, -1.0, std::uint64_t(1)), InvalidParameter);
}

TEST(SampleMasks, SameSeedSameSample) {
    std::vector<Logits> ls;
    for (int i = 0; i < 1000; ++i) ls.push_back({0.01 * i - 5, 0.0});
    const auto a = sample_masks<double>(ls, 0.5, std::uint64_t(42));
    const auto b = sample_masks<double>(ls, 0.5, std::uint64_t(42));
    const auto c = sample_masks<double>(ls, 0.5, std::uint64_t(43));
    EXPECT_EQ(a.hard, b.hard);
    EXPECT_EQ(a.soft, b.soft);
    EXPECT_NE(a.soft, c.soft);
}

TEST(SteMasks, ThresholdExamples) {
    const auto logit = [](double p) { return Logits{std::log(p / (1 - p)), 0.0}; };
    const std::vector<Logits> ls = {logit(0.6), {0.0, 0.0}, logit(0.49)};
    const auto s = ste_masks<double>(ls, 0.5);
    EXPECT_EQ(s.hard, (std::vector<double>{1, 1, 0}));
    EXPECT_TRUE(s.pass_through);
    for (std::size_t i = 0; i < ls.size(); ++i) EXPECT_EQ(s.soft[i], existence_prob(ls[i]));
}

TEST(ModeMasks, CarryNoGradient) {
    const std::vector<Logits> ls = {{1, 0}, {-1, 0}};
    const auto s = mode_masks<double>(ls);
    EXPECT_EQ(s.hard, (std::vector<double>{1, 0}));
    EXPECT_FALSE(s.pass_through);
    std::vector<Logits> d(2, Logits{0, 0});
    const std::vector<double> up = {1.0, 1.0};
    accumulate_logit_grads<double>(s, up, d);
    EXPECT_EQ(d[0], (Logits{0, 0}));
}

TEST(MaskLoss, Examples) {
    EXPECT_EQ(mask_loss(MaskSample<double>::all_on(7), MaskLossKind::squared).value, 1.0);
    MaskSample<double> half;
    half.hard = {1, 0, 1, 0};
    half.soft = {0.9, 0.1, 0.8, 0.2};
    EXPECT_EQ(mask_loss(half, MaskLossKind::squared).value, 0.25);
    EXPECT_EQ(mask_loss(half, MaskLossKind::l1).value, 0.5);
    MaskSample<double> none;
    EXPECT_THROW(mask_loss(none, MaskLossKind::l1), InvalidParameter);
}

TEST(MaskLoss, SquaredGradientMatchesFiniteDifferences) {
    // The loss is evaluated on forward values; perturb one of them as a real number.
    const std::vector<double> m = {1, 0, 1, 1, 0, 1, 0};
    const double n = double(m.size());
    const auto f = [&](std::size_t i, double x) {
        double s = 0;
        for (std::size_t k = 0; k < m.size(); ++k) s += k == i ? x : m[k];
        return (s / n) * (s / n);
    };
    MaskSample<double> sample;
    sample.hard = m;
    sample.soft = m;
    const auto loss = mask_loss(sample, MaskLossKind::squared);
    double mean = 0;
    for (const double v : m) mean += v / n;
    EXPECT_NEAR(loss.d_each, 2 * mean / n, 1e-15);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double fd = central_difference([&](double x) { return f(i, x); }, m[i], 1e-6);
        EXPECT_LT(std::abs(loss.d_each - fd) / std::abs(fd), 1e-6);
    }
}

TEST(MaskLoss, SquaredIsL1SquaredForUniformMasks) {
    for (const double v : {0.0, 1.0}) {
        MaskSample<double> s;
        s.hard.assign(9, v);
        s.soft.assign(9, v);
        const double sq = mask_loss(s, MaskLossKind::squared).value;
        const double l1 = mask_loss(s, MaskLossKind::l1).value;
        EXPECT_EQ(sq, l1 * l1);
    }
}

TEST(AccumulateLogitGrads, OppositeSignsOnTheTwoLogits) {
    const std::vector<Logits> ls = {{0.5, 0.0}, {-0.2, 0.3}};
    const auto s = sample_masks<double>(ls, 0.5, std::uint64_t(2));
    std::vector<Logits> d(2, Logits{0, 0});
    const std::vector<double> up = {2.0, -1.0};
    accumulate_logit_grads<double>(s, up, d);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_DOUBLE_EQ(d[i][0], up[i] * s.slope[i]);
        EXPECT_DOUBLE_EQ(d[i][1], -d[i][0]);
    }
}

TEST(PruneNeverSampled, SaturatedSets) {
    const auto all = prune_never_sampled<double>(repeat({30, -30}, 500), 10, 1);
    EXPECT_EQ(all.size(), 500u);
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_TRUE(prune_never_sampled<double>(repeat({-30, 30}, 500), 10, 1).empty());
}

TEST(PruneNeverSampled, RemovalFractionMatchesClosedForm) {
    const std::size_t n = 10000;
    for (const double p : {0.01, 0.5}) {
        const auto keep = prune_never_sampled<double>(repeat({std::log(p / (1 - p)), 0.0}, n), 10, 77);
        const double removed = 1.0 - double(keep.size()) / double(n);
        EXPECT_NEAR(removed, std::pow(1 - p, 10), 0.01) << "p=" << p;
    }
    EXPECT_NEAR(std::pow(0.99, 10), 0.904, 5e-4);
    EXPECT_NEAR(std::pow(0.5, 10), 0.00098, 5e-6);
}

TEST(PruneNeverSampled, DeterministicAndValidated) {
    std::vector<Logits> ls;
    for (int i = 0; i < 2000; ++i) ls.push_back({-3.0 + 0.003 * i, 0.0});
    EXPECT_EQ(prune_never_sampled<double>(ls, 10, 9), prune_never_sampled<double>(ls, 10, 9));
    EXPECT_THROW(prune_never_sampled<double>(ls, 0, 9), InvalidParameter);
}

TEST(MaskConfig, Validation) {
    MaskConfig c;
    EXPECT_NO_THROW(c.validate());
    c.temperature = 0;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = MaskConfig{};
    c.lambda = -1e-3;
    EXPECT_THROW(c.validate(), InvalidParameter);
    EXPECT_EQ(parse_mask_mode("ste"), MaskMode::ste);
    EXPECT_THROW(parse_mask_mode("bogus"), InvalidParameter);
}
