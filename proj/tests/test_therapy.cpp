#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "soctwin/error.hpp"
#include "soctwin/therapy.hpp"
#include "support.hpp"

using namespace soctwin;
using namespace soctwin::test;

namespace {

TreatmentTimeline with_chemo(std::vector<ChemoCourse> courses, KillMode mode = KillMode::Additive) {
    TreatmentTimeline tl;
    tl.chemo = std::move(courses);
    tl.kill_mode = mode;
    return tl;
}

}  // namespace

TEST(Chemo, NoCoursesIsZero) {
    const TreatmentTimeline tl;
    for (double t : {-5.0, 0.0, 3.5, 1e4}) EXPECT_EQ(chemo_exposure(tl, t), 0.0);
}

TEST(Chemo, HalfLife) {
    const double lam = 0.2;
    const auto tl = with_chemo({{10.0, 1.0, lam, "TMZ"}});
    EXPECT_DOUBLE_EQ(chemo_exposure(tl, 10.0), 1.0);
    EXPECT_NEAR(chemo_exposure(tl, 10.0 + std::numbers::ln2 / lam), 0.5, 1e-15);
    EXPECT_EQ(chemo_exposure(tl, 9.999), 0.0);
}

TEST(Chemo, OverlappingCoursesAdd) {
    const ChemoCourse a{2.0, 1.3, 0.1, "A"}, b{5.0, 0.7, 0.4, "B"};
    const auto both = with_chemo({a, b});
    for (double t = 0.0; t < 30.0; t += 0.37) {
        const double ref = (t >= a.start_day ? a.amplitude * std::exp(-a.decay_rate * (t - a.start_day)) : 0.0) +
                           (t >= b.start_day ? b.amplitude * std::exp(-b.decay_rate * (t - b.start_day)) : 0.0);
        EXPECT_NEAR(chemo_exposure(both, t), ref, 1e-15);
    }
}

TEST(Chemo, ZeroDecayIsStep) {
    const auto tl = with_chemo({{3.0, 2.0, 0.0, "TMZ"}});
    EXPECT_EQ(chemo_exposure(tl, 2.9), 0.0);
    EXPECT_EQ(chemo_exposure(tl, 3.0), 2.0);
    EXPECT_EQ(chemo_exposure(tl, 300.0), 2.0);
}

TEST(KillRate, ZeroExposureAllModes) {
    for (auto mode : {KillMode::Additive, KillMode::Saturation, KillMode::Synergy}) {
        const auto tl = with_chemo({}, mode);
        EXPECT_EQ(effective_kill_rate(tl, 0.3, 5.0, true), 0.0);
    }
}

TEST(KillRate, AdditiveAndSaturationValues) {
    auto tl = with_chemo({{0.0, 2.0, 0.0, "TMZ"}});
    EXPECT_NEAR(effective_kill_rate(tl, 0.05, 1.0, false), 0.1, 1e-15);
    tl.kill_mode = KillMode::Saturation;
    tl.saturation_half = 2.0;
    EXPECT_NEAR(effective_kill_rate(tl, 0.05, 1.0, false), 0.05, 1e-15);
}

TEST(KillRate, SynergyGatedOnRt) {
    auto tl = with_chemo({{0.0, 2.0, 0.0, "TMZ"}}, KillMode::Synergy);
    tl.synergy_gain = 0.5;
    EXPECT_NEAR(effective_kill_rate(tl, 0.05, 1.0, false), 0.1, 1e-15);
    EXPECT_NEAR(effective_kill_rate(tl, 0.05, 1.0, true), 0.15, 1e-15);
    tl.rt = {{10.0, 2.0}, {20.0, 2.0}};
    EXPECT_FALSE(tl.rt_active(9.9));
    EXPECT_TRUE(tl.rt_active(10.0));
    EXPECT_TRUE(tl.rt_active(20.0));
    EXPECT_FALSE(tl.rt_active(20.1));
}

TEST(KillRate, OrderingAndMonotonicity) {
    Rng rng(4);
    for (int rep = 0; rep < 200; ++rep) {
        const double amp1 = rng.uniform(0.0, 5.0), amp2 = amp1 + rng.uniform(0.0, 5.0);
        const double act = rng.uniform(0.0, 1.0);
        for (auto mode : {KillMode::Additive, KillMode::Saturation, KillMode::Synergy}) {
            auto lo = with_chemo({{0.0, amp1, 0.0, "x"}}, mode);
            auto hi = with_chemo({{0.0, amp2, 0.0, "x"}}, mode);
            lo.saturation_half = hi.saturation_half = rng.uniform(0.1, 3.0);
            const bool rt = rng.bernoulli(0.5);
            EXPECT_LE(effective_kill_rate(lo, act, 1.0, rt), effective_kill_rate(hi, act, 1.0, rt) + 1e-15);
            const double add = effective_kill_rate(with_chemo({{0.0, amp2, 0.0, "x"}}), act, 1.0, rt);
            if (mode == KillMode::Saturation) {
                EXPECT_LE(effective_kill_rate(hi, act, 1.0, rt), add + 1e-15);
            }
            if (mode == KillMode::Synergy && rt) {
                EXPECT_GE(effective_kill_rate(hi, act, 1.0, rt), add - 1e-15);
            }
        }
    }
}

TEST(KillRate, SaturationApproachesAdditive) {
    auto tl = with_chemo({{0.0, 1.7, 0.0, "x"}}, KillMode::Saturation);
    tl.saturation_half = 1e9;
    const double add = effective_kill_rate(with_chemo({{0.0, 1.7, 0.0, "x"}}), 0.2, 1.0, false);
    EXPECT_NEAR(effective_kill_rate(tl, 0.2, 1.0, false), add, 1e-6 * add);
}

TEST(KillRate, ZeroHalfIsConfigError) {
    auto tl = with_chemo({{0.0, 1.0, 0.0, "x"}}, KillMode::Saturation);
    tl.saturation_half = 0.0;
    EXPECT_THROW(effective_kill_rate(tl, 0.1, 1.0, false), ConfigError);
}

TEST(Rt, SurvivalValues) {
    EXPECT_EQ(rt_survival(0.0, 0.3, 0.03), 1.0);
    EXPECT_NEAR(rt_survival(2.0, 0.3, 0.03), 0.48675225595997168, 1e-15);
}

TEST(Rt, ThirtyFractionsCompose) {
    ScalarField n(4, 4, 1.0, 1.0);
    const double s = rt_survival(2.0, 0.3, 0.03);
    double product = 1.0;
    for (int i = 0; i < 30; ++i) {
        n = apply_rt_fraction(n, {static_cast<double>(i), 2.0}, 0.3, 0.03);
        product *= s;
    }
    EXPECT_NEAR(product, std::exp(-30 * 0.72), 1e-12 * product);
    for (std::size_t i = 0; i < n.size(); ++i) EXPECT_NEAR(n[i], std::exp(-30 * 0.72), 1e-12 * product);
}

TEST(Rt, FractionIdentityAndUniform) {
    Rng rng(8);
    const ScalarField n = random_field(6, 6, 1.0, rng);
    EXPECT_EQ(apply_rt_fraction(n, {0.0, 0.0}, 0.3, 0.03), n);
    const ScalarField full(6, 6, 1.0, 1.0);
    const ScalarField out = apply_rt_fraction(full, {0.0, 2.0}, 0.3, 0.03);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], rt_survival(2.0, 0.3, 0.03));
}

TEST(Surgery, MulExplicitResection) {
    Rng rng(12);
    const ScalarField n = random_field(8, 8, 1.0, rng);
    const BinaryMask tumor(8, 8);
    for (double r : {1.0, 0.0, 0.5}) {
        SurgeryEvent ev;
        ev.resection = ScalarField(8, 8, 1.0, r);
        const ScalarField out = apply_surgery(n, ev, tumor);
        for (std::size_t i = 0; i < n.size(); ++i) EXPECT_DOUBLE_EQ(out[i], (1.0 - r) * n[i]);
    }
}

TEST(Surgery, MulExtentOnTumorMask) {
    ScalarField n(8, 8, 1.0, 0.4);
    const BinaryMask tumor = disk(8, 8, 4, 4, 2);
    SurgeryEvent ev;
    ev.extent = 0.75;
    const ScalarField out = apply_surgery(n, ev, tumor);
    for (std::size_t i = 0; i < n.size(); ++i) EXPECT_DOUBLE_EQ(out[i], tumor.at(i) ? 0.1 : 0.4);
}

TEST(Surgery, MorphOpAndRimClearDilatedMask) {
    ScalarField n(11, 11, 1.0, 0.8);
    const BinaryMask tumor = disk(11, 11, 5, 5, 1.5);
    for (auto mode : {SurgeryMode::MorphOp, SurgeryMode::Rim}) {
        SurgeryEvent ev;
        ev.mode = mode;
        ev.erosion_radius = 2;
        ev.rim_width = 2;
        const ScalarField out = apply_surgery(n, ev, tumor);
        const BinaryMask cleared = dilate(tumor, 2);
        for (std::size_t i = 0; i < n.size(); ++i) EXPECT_EQ(out[i], cleared.at(i) ? 0.0 : 0.8);
    }
}

TEST(Surgery, InvalidResectionRejected) {
    const ScalarField n(4, 4, 1.0, 0.5);
    SurgeryEvent ev;
    ev.resection = ScalarField(4, 4, 1.0, 1.5);
    EXPECT_THROW(apply_surgery(n, ev, BinaryMask(4, 4)), ValidationError);
}

TEST(EventMaps, RangeAndLipschitz) {
    Rng rng(21);
    for (int rep = 0; rep < 100; ++rep) {
        const double theta = rng.uniform(0.5, 2.0);
        const ScalarField a = random_field(12, 12, 1.0, rng, 0.0, theta);
        const ScalarField b = random_field(12, 12, 1.0, rng, 0.0, theta);
        const BinaryMask tumor = threshold(a, 0.5 * theta);
        std::vector<std::pair<ScalarField, ScalarField>> outs;
        for (auto mode : {SurgeryMode::Mul, SurgeryMode::MorphOp, SurgeryMode::Rim}) {
            SurgeryEvent ev;
            ev.mode = mode;
            ev.extent = rng.uniform();
            ev.erosion_radius = static_cast<int>(rng.integer(0, 3));
            ev.rim_width = static_cast<int>(rng.integer(0, 3));
            outs.emplace_back(apply_surgery(a, ev, tumor), apply_surgery(b, ev, tumor));
        }
        const RtFraction fr{0.0, rng.uniform(0.0, 5.0)};
        const double ar = rng.uniform(0.0, 0.5), br = rng.uniform(0.0, 0.1);
        outs.emplace_back(apply_rt_fraction(a, fr, ar, br), apply_rt_fraction(b, fr, ar, br));
        for (const auto& [ja, jb] : outs) {
            EXPECT_GE(ja.min(), 0.0);
            EXPECT_LE(ja.max(), theta);
            for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(ja[i], a[i]);
            EXPECT_LE(l2_diff(ja, jb), l2_diff(a, b) * (1 + 1e-14));
        }
    }
}

TEST(Timeline, ValidationAndParsing) {
    TreatmentTimeline tl;
    tl.rt = {{5.0, 2.0}, {3.0, 2.0}};
    EXPECT_THROW(tl.validate(), ValidationError);
    tl.rt = {{3.0, -1.0}};
    EXPECT_THROW(tl.validate(), ValidationError);
    tl.rt.clear();
    tl.synergy_gain = -1.0;
    EXPECT_THROW(tl.validate(), ValidationError);
    EXPECT_EQ(parse_kill_mode("saturation"), KillMode::Saturation);
    EXPECT_EQ(parse_surgery_mode("rim"), SurgeryMode::Rim);
    EXPECT_THROW(parse_kill_mode("bogus"), ValidationError);
}
