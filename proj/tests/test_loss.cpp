#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "uwseg/loss.hpp"
#include "uwseg/rng.hpp"

using namespace uwseg;

namespace {

LogitMap random_logits(int C, int H, int W, std::uint64_t seed) {
    LogitMap l(C, H, W);
    Rng rng(seed);
    for (auto& v : l.data()) v = rng.uniform(-2.0, 2.0);
    return l;
}

LabelMask random_target(int C, int H, int W, std::uint64_t seed) {
    LabelMask m(H, W);
    Rng rng(seed);
    for (auto& v : m.data()) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(C)));
    return m;
}

}  // namespace

TEST(WeightedCe, UniformLogitsGiveLnC) {
    const LogitMap l(4, 3, 3, 0.0);
    const LabelMask t = random_target(4, 3, 3, 1);
    const LossResult r = weighted_ce(l, t, nullptr, LossConfig{});
    EXPECT_NEAR(r.value, std::log(4.0), 1e-12);
}

TEST(WeightedCe, MatchesDirectSoftmaxFormula) {
    const LogitMap l = random_logits(3, 5, 5, 2);
    const LabelMask t = random_target(3, 5, 5, 3);
    const LossResult r = weighted_ce(l, t, nullptr, LossConfig{});
    EXPECT_NEAR(r.value, oracle::plain_ce(l, t), 1e-12);
}

TEST(WeightedCe, ZeroIuEqualsPlain) {
    const LogitMap l = random_logits(3, 4, 4, 4);
    const LabelMask t = random_target(3, 4, 4, 5);
    const UncertaintyMap zero(4, 4, 0.0);

    LossConfig iu_cfg;
    iu_cfg.mode = LossMode::InstanceUncertainty;
    const LossResult with_iu = weighted_ce(l, t, &zero, iu_cfg);
    const LossResult plain = weighted_ce(l, t, nullptr, LossConfig{});
    EXPECT_EQ(with_iu.value, plain.value);
    EXPECT_EQ(with_iu.grad_logits, plain.grad_logits);
}

TEST(WeightedCe, IuWeightIsOnePlusUSquared) {
    LogitMap l = random_logits(2, 1, 1, 6);
    LabelMask t(1, 1, 0);
    UncertaintyMap u(1, 1, 0.5);

    LossConfig cfg;
    cfg.mode = LossMode::InstanceUncertainty;
    const double weighted = weighted_ce(l, t, &u, cfg).value;
    const double plain = weighted_ce(l, t, nullptr, LossConfig{}).value;
    EXPECT_NEAR(weighted, 2.25 * plain, 1e-12);

    cfg.iu_exponent = 1.0;
    EXPECT_NEAR(weighted_ce(l, t, &u, cfg).value, 1.5 * plain, 1e-12);
}

TEST(WeightedCe, ClassWeightsScalePerPixel) {
    LogitMap l(2, 1, 2, 0.0);
    LabelMask t(1, 2);
    t.at(0, 0) = 0;
    t.at(0, 1) = 1;

    LossConfig cfg;
    cfg.mode = LossMode::ClassProportion;
    cfg.class_weights = {3.0, 1.0};
    const LossResult r = weighted_ce(l, t, nullptr, cfg);
    EXPECT_NEAR(r.value, (3.0 * std::log(2.0) + 1.0 * std::log(2.0)) / 2.0, 1e-12);
}

TEST(WeightedCe, MeanIsSumOverN) {
    const LogitMap l = random_logits(3, 4, 4, 7);
    const LabelMask t = random_target(3, 4, 4, 8);
    LossConfig mean_cfg, sum_cfg;
    sum_cfg.reduction = Reduction::Sum;
    const double mean = weighted_ce(l, t, nullptr, mean_cfg).value;
    const double sum = weighted_ce(l, t, nullptr, sum_cfg).value;
    EXPECT_NEAR(sum, mean * 16.0, 1e-9);
}

TEST(WeightedCe, IgnoredPixelsContributeNothing) {
    LogitMap l = random_logits(3, 2, 2, 9);
    LabelMask t = random_target(3, 2, 2, 10);
    t.at(0, 0) = kIgnoreLabel;

    const LossResult r = weighted_ce(l, t, nullptr, LossConfig{});
    for (int c = 0; c < 3; ++c) EXPECT_EQ(r.grad_logits.at(c, 0, 0), 0.0);

    // changing logits under the ignored pixel leaves the loss unchanged
    l.at(1, 0, 0) += 100.0;
    EXPECT_EQ(weighted_ce(l, t, nullptr, LossConfig{}).value, r.value);
}

TEST(WeightedCe, GradientMatchesFiniteDifferences) {
    LogitMap l = random_logits(3, 3, 3, 11);
    LabelMask t = random_target(3, 3, 3, 12);
    UncertaintyMap u(3, 3);
    Rng rng(13);
    for (auto& v : u.data()) v = rng.uniform(0.0, 1.5);
    t.at(1, 1) = kIgnoreLabel;

    LossConfig cfg;
    cfg.mode = LossMode::InstanceUncertainty;
    const LossResult r = weighted_ce(l, t, &u, cfg);

    for (std::size_t i = 0; i < l.size(); ++i) {
        const double num = oracle::central_diff(
            [&] { return weighted_ce(l, t, &u, cfg).value; }, &l.data()[i], 1e-5);
        const double ana = r.grad_logits.data()[i];
        EXPECT_NEAR(ana, num, 1e-6 * std::max(1.0, std::fabs(num))) << "index " << i;
    }
}

TEST(WeightedCe, GradientSumsToZeroPerPixel) {
    const LogitMap l = random_logits(4, 2, 2, 14);
    const LabelMask t = random_target(4, 2, 2, 15);
    const LossResult r = weighted_ce(l, t, nullptr, LossConfig{});
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            double s = 0.0;
            for (int c = 0; c < 4; ++c) s += r.grad_logits.at(c, y, x);
            EXPECT_NEAR(s, 0.0, 1e-15);
        }
    }
}

TEST(WeightedCe, PreconditionViolations) {
    const LogitMap l = random_logits(3, 2, 2, 16);
    const LabelMask t = random_target(3, 2, 2, 17);
    const UncertaintyMap u(2, 2, 0.1);

    LossConfig iu_cfg;
    iu_cfg.mode = LossMode::InstanceUncertainty;
    EXPECT_THROW(weighted_ce(l, t, nullptr, iu_cfg), ContractError);  // missing mask
    EXPECT_THROW(weighted_ce(l, t, &u, LossConfig{}), ContractError);  // unexpected mask

    UncertaintyMap neg(2, 2, -0.5);
    EXPECT_THROW(weighted_ce(l, t, &neg, iu_cfg), ContractError);

    LossConfig cp_cfg;
    cp_cfg.mode = LossMode::ClassProportion;
    cp_cfg.class_weights = {1.0, 1.0};  // wrong length
    EXPECT_THROW(weighted_ce(l, t, nullptr, cp_cfg), ContractError);

    LabelMask all_ignored(2, 2, kIgnoreLabel);
    EXPECT_THROW(weighted_ce(l, all_ignored, nullptr, LossConfig{}), ContractError);

    LogitMap bad = l;
    bad.at(0, 0, 0) = std::nan("");
    EXPECT_THROW(weighted_ce(bad, t, nullptr, LossConfig{}), ContractError);

    LabelMask out_of_range = t;
    out_of_range.at(0, 0) = 3;
    EXPECT_THROW(weighted_ce(l, out_of_range, nullptr, LossConfig{}), ContractError);
}

TEST(ClassProportionWeights, InverseFrequencyNormalized) {
    LabelMask a(2, 2, 0);
    a.at(1, 1) = 1;  // class 0: 3 px, class 1: 1 px
    const ClassWeights cw = class_proportion_weights({a}, 2);
    ASSERT_EQ(cw.weights.size(), 2u);
    // weight_c = total / (C * count_c): 4/(2*3) and 4/(2*1)
    EXPECT_NEAR(cw.weights[0], 4.0 / 6.0, 1e-12);
    EXPECT_NEAR(cw.weights[1], 2.0, 1e-12);
    EXPECT_TRUE(cw.absent_classes.empty());
}

TEST(ClassProportionWeights, AbsentClassesFlagged) {
    const LabelMask a(2, 2, 0);
    const ClassWeights cw = class_proportion_weights({a}, 3);
    EXPECT_EQ(cw.weights[1], 0.0);
    EXPECT_EQ(cw.weights[2], 0.0);
    EXPECT_EQ(cw.absent_classes, (std::vector<int>{1, 2}));
}

TEST(ClassProportionWeights, IgnoredPixelsExcluded) {
    LabelMask a(1, 4, 0);
    a.at(0, 2) = 1;
    a.at(0, 3) = kIgnoreLabel;
    const ClassWeights cw = class_proportion_weights({a}, 2);
    // 3 counted px: class0 2, class1 1
    EXPECT_NEAR(cw.weights[0], 3.0 / (2.0 * 2.0), 1e-12);
    EXPECT_NEAR(cw.weights[1], 3.0 / (2.0 * 1.0), 1e-12);
}
