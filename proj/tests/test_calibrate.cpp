#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "soctwin/calibrate.hpp"
#include "soctwin/error.hpp"
#include "soctwin/synth.hpp"
#include "support.hpp"

using namespace soctwin;
using namespace soctwin::test;

namespace {

RolloutConfig cfg_tight(int spd = 1) {
    RolloutConfig cfg;
    cfg.steps_per_day = spd;
    cfg.cg.tol = 1e-12;
    return cfg;
}

// Two follow-ups; the tumour grows, then RT and chemo shrink it.
PatientRecord treated_fixture(bool events) {
    PatientRecord p = simple_patient(16, 16, {0.0, 8.0, 16.0},
                                     {disk(16, 16, 8, 8, 3), disk(16, 16, 8, 8, 3.6), disk(16, 16, 8, 8, 2.5)});
    if (events) {
        SurgeryEvent s;
        s.day = 4.0;
        ScalarField r(16, 16, 1.0, 0.0);
        for (int y = 6; y < 10; ++y)
            for (int x = 6; x < 10; ++x) r(x, y) = 0.3;
        s.resection = r;
        p.timeline.surgeries = {s};
        p.timeline.rt = {{9.0, 2.0}, {10.0, 2.0}, {11.0, 2.0}};
        p.timeline.chemo = {{9.0, 1.0, 0.1, "TMZ"}};
    }
    return p;
}

BioParams fixture_params() {
    BioParams b;
    b.D = 0.2;
    b.k = 0.06;
    b.alpha_ct = 0.08;
    b.alpha_rt = 0.05;
    b.beta_rt = 0.005;
    return b;
}

}  // namespace

TEST(SoftMask, MidpointSaturationMonotone) {
    ScalarField n(3, 1, 1.0);
    n[0] = 0.5;
    n[1] = 0.0;
    n[2] = 1.0;
    const ScalarField p = soft_mask(n, 0.5, 1.0, 0.01);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_LT(p[1], 1e-20);
    EXPECT_GE(p[2], 1.0 - 1e-12);
    Rng rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        ScalarField a(1, 1, 1.0, rng.uniform()), b(1, 1, 1.0, rng.uniform());
        if (a[0] > b[0]) std::swap(a, b);
        EXPECT_LE(soft_mask(a, 0.5, 1.0, 0.05)[0], soft_mask(b, 0.5, 1.0, 0.05)[0]);
    }
}

TEST(Loss, FourByFourOracle) {
    const double vals[16] = {0.0, 0.1, 0.45, 0.52, 0.9, 1.0, 0.3, 0.6, 0.49, 0.51, 0.2, 0.8, 0.05, 0.95, 0.7, 0.35};
    const int mbits[16] = {0, 0, 1, 1, 1, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0};
    ScalarField pred(4, 4, 1.0);
    BinaryMask m(4, 4);
    for (int i = 0; i < 16; ++i) {
        pred[static_cast<std::size_t>(i)] = vals[i];
        m.bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(mbits[i]);
    }
    LossConfig lc;
    lc.dice_weight = 0.7;
    lc.bce_weight = 1.3;
    lc.soft_temp = 0.05;
    lc.eps = 1.0;
    double sp = 0, sm = 0, spm = 0, bce = 0;
    for (int i = 0; i < 16; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-(vals[i] - 0.5) / 0.05));
        const double pc = std::min(std::max(p, 1e-7), 1 - 1e-7);
        sp += p;
        sm += mbits[i];
        spm += p * mbits[i];
        bce += -(mbits[i] * std::log(pc) + (1 - mbits[i]) * std::log(1 - pc));
    }
    const double expect = 0.7 * (1 - (2 * spm + 1.0) / (sp + sm + 1.0)) + 1.3 * bce / 16.0;
    EXPECT_NEAR(loss(pred, m, lc, 0.5, 1.0), expect, 1e-12);
    EXPECT_NEAR(loss_with_gradient(pred, m, lc, 0.5, 1.0).value, expect, 1e-12);
}

TEST(Loss, PerfectAndEmptyCases) {
    const BinaryMask m = disk(8, 8, 4, 4, 2);
    ScalarField pred(8, 8, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) pred[i] = m.at(i) ? 1.0 : 0.0;
    LossConfig dice_only;
    dice_only.bce_weight = 0.0;
    dice_only.soft_temp = 1e-3;
    EXPECT_NEAR(loss(pred, m, dice_only, 0.5, 1.0), 0.0, 1e-12);
    const double empty = loss(ScalarField(8, 8, 1.0), BinaryMask(8, 8), LossConfig{}, 0.5, 1.0);
    EXPECT_TRUE(std::isfinite(empty));
    EXPECT_GE(empty, 0.0);
    EXPECT_LT(empty, 0.01);
    EXPECT_THROW(loss(ScalarField(8, 8, 1.0), BinaryMask(4, 4), LossConfig{}, 0.5, 1.0), ShapeError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    const ScalarField pred = random_field(6, 6, 1.0, rng, 0.3, 0.7);
    const BinaryMask m = random_mask(6, 6, rng);
    LossConfig lc;
    lc.soft_temp = 0.1;
    const auto g = loss_with_gradient(pred, m, lc, 0.5, 1.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ScalarField a = pred, b = pred;
        a[i] += 1e-6;
        b[i] -= 1e-6;
        const double fd = (loss(a, m, lc, 0.5, 1.0) - loss(b, m, lc, 0.5, 1.0)) / 2e-6;
        EXPECT_NEAR(g.d_pred[i], fd, 1e-7);
    }
}

TEST(GradFd, DeadBetaWithoutRt) {
    const PatientRecord p = treated_fixture(false);
    const Gradient g = grad_fd(p, fixture_params(), ModulatorWeights::zeros(), cfg_tight(), LossConfig{}, 1e-4, false);
    EXPECT_NEAR(g.params[4], 0.0, 1e-10);
    EXPECT_NEAR(g.params[3], 0.0, 1e-10);
}

TEST(GradFd, SecondOrderInStep) {
    const PatientRecord p = treated_fixture(true);
    const BioParams b = fixture_params();
    const auto w = ModulatorWeights::zeros();
    const auto cfg = cfg_tight();
    const LossConfig lc;
    const double exact = grad_adjoint(p, b, w, cfg, lc).gradient.params[1];
    const double e1 = std::abs(grad_fd(p, b, w, cfg, lc, 4e-2, false).params[1] - exact);
    const double e2 = std::abs(grad_fd(p, b, w, cfg, lc, 2e-2, false).params[1] - exact);
    EXPECT_NEAR(e1 / e2, 4.0, 0.5);
}

TEST(Adjoint, SingleRiccatiSubstepByHand) {
    PatientRecord p = simple_patient(8, 8, {0.0, 1.0}, {disk(8, 8, 4, 4, 2), disk(8, 8, 4, 4, 2.5)});
    RolloutConfig cfg = cfg_tight();
    cfg.obs_density_level = 0.6;
    BioParams b;
    b.D = 0.0;
    b.k = 0.2;
    LossConfig lc;
    lc.soft_temp = 0.1;
    const auto ad = grad_adjoint(p, b, ModulatorWeights::zeros(), cfg, lc);
    const ScalarField n0 = field_from_mask(p.observations[0].mask, p.anatomy, 0.6);
    ScalarField pred = n0;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = riccati_flow(n0[i], b.k, b.k, 1.0);
    const auto lg = loss_with_gradient(pred, p.observations[1].mask, lc, 0.5, 1.0);
    double dk = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto rp = riccati_partials(n0[i], b.k, b.k, 1.0);
        dk += lg.d_pred[i] * (rp.d_a + rp.d_b / b.theta);
    }
    EXPECT_NEAR(ad.gradient.params[1], dk, 1e-12 * std::max(1.0, std::abs(dk)));
    EXPECT_NEAR(ad.loss, lg.value, 1e-14);
}

TEST(Adjoint, RadiosensitivityGradientSignOnShrinkingTarget) {
    PatientRecord p = simple_patient(16, 16, {0.0, 14.0}, {disk(16, 16, 8, 8, 3), disk(16, 16, 8, 8, 1.5)});
    for (int d = 2; d < 5; ++d) p.timeline.rt.push_back({static_cast<double>(d), 2.0});
    BioParams b = fixture_params();
    b.D = 0.02;
    const auto ad = grad_adjoint(p, b, ModulatorWeights::zeros(), cfg_tight(), LossConfig{});
    const auto fd = grad_fd(p, b, ModulatorWeights::zeros(), cfg_tight(), LossConfig{}, 1e-4, false);
    EXPECT_LT(fd.params[3], 0.0);
    EXPECT_LT(ad.gradient.params[3], 0.0);
    EXPECT_LT(ad.gradient.params[4], 0.0);
}

TEST(Adjoint, EventsOffMatchesFd) {
    const PatientRecord p = treated_fixture(false);
    LossConfig lc;
    lc.all_followups = true;
    RolloutConfig cfg = cfg_tight(2);
    cfg.obs_density_level = 0.9;
    const auto ad = grad_adjoint(p, fixture_params(), ModulatorWeights::zeros(), cfg, lc);
    ASSERT_TRUE(ad.clamp_free);
    const auto fd = grad_fd(p, fixture_params(), ModulatorWeights::zeros(), cfg, lc, 1e-4, true);
    EXPECT_LE(relative_l2(ad.gradient.flat(), fd.flat()), 1e-4);
}

TEST(Adjoint, WithEventsAndWeightsMatchesFd) {
    PatientRecord p = treated_fixture(true);
    p.covariates.markers = {{"IDH_mutant", true}};
    Rng rng(3);
    ModulatorWeights w = ModulatorWeights::zeros();
    auto flat = w.flat();
    for (auto& v : flat) v = rng.normal(0.0, 0.1);
    w.assign_flat(flat);
    LossConfig lc;
    lc.all_followups = true;
    RolloutConfig cfg = cfg_tight(2);
    cfg.assimilation_alpha = 0.6;
    const auto ad = grad_adjoint(p, fixture_params(), w, cfg, lc);
    ASSERT_TRUE(ad.clamp_free);
    const auto fd = grad_fd(p, fixture_params(), w, cfg, lc, 1e-4, true);
    EXPECT_LE(relative_l2(ad.gradient.flat(), fd.flat()), 1e-3);
}

TEST(Adjoint, EmptyTapeIsStateError) {
    const PatientRecord p = treated_fixture(false);
    EXPECT_THROW(adjoint_sweep(p, Tape{}, BioParams{}, ModulatorWeights::zeros(), cfg_tight(), LossConfig{}),
                 StateError);
}

TEST(Fit, FlatLossLeavesParamsUnchanged) {
    const PatientRecord p = simple_patient(8, 8, {0.0, 5.0}, {BinaryMask(8, 8), BinaryMask(8, 8)});
    OptimConfig oc;
    oc.max_iters = 5;
    ModelState init;
    const FitResult r = fit(std::vector<PatientRecord>{p}, init, oc, LossConfig{}, cfg_tight());
    EXPECT_EQ(r.params, init.params);
    EXPECT_EQ(r.weights, init.weights);
    for (double l : r.loss_history) EXPECT_EQ(l, r.loss_history.front());
}

TEST(Fit, TinyClipBoundsMovement) {
    const PatientRecord p = treated_fixture(true);
    OptimConfig oc;
    oc.max_iters = 1;
    oc.clip_norm = 1e-12;
    oc.train_weights = false;
    ModelState init;
    init.params = fixture_params();
    const std::vector<PatientRecord> cohort{p};
    // Either iterate may be returned; both lie within one Adam step of the start.
    const FitResult r = fit(cohort, init, oc, LossConfig{}, cfg_tight());
    for (auto [a, b] : {std::pair{r.params.D, init.params.D}, std::pair{r.params.k, init.params.k},
                        std::pair{r.params.alpha_ct, init.params.alpha_ct}}) {
        EXPECT_LE(std::abs(std::log(a / b)), oc.lr_params * 1.0001);
    }
    EXPECT_LE(r.loss_history[static_cast<std::size_t>(r.best_iteration)], r.loss_history.front());
}

TEST(Fit, DeterministicPositiveAndNeverWorse) {
    std::vector<PatientRecord> cohort{treated_fixture(true), treated_fixture(false)};
    cohort[1].id = "P1";
    OptimConfig oc;
    oc.max_iters = 8;
    oc.weight_init_scale = 0.05;
    oc.seed = 17;
    ModelState init;
    init.params = fixture_params();
    const FitResult a = fit(cohort, init, oc, LossConfig{}, cfg_tight());
    const FitResult b = fit(cohort, init, oc, LossConfig{}, cfg_tight());
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.loss_history, b.loss_history);
    EXPECT_GT(a.params.D, 0.0);
    EXPECT_GT(a.params.k, 0.0);
    EXPECT_GT(a.params.beta_rt, 0.0);
    EXPECT_LE(a.loss_history[static_cast<std::size_t>(a.best_iteration)], a.loss_history.front());
    oc.threads = 2;
    const FitResult c = fit(cohort, init, oc, LossConfig{}, cfg_tight());
    EXPECT_EQ(a.params, c.params);
}

TEST(Fit, SinglePatientRecovery) {
    CohortSpec spec;
    spec.n_patients = 1;
    spec.width = 40;
    spec.height = 40;
    spec.steps_per_day = 1;
    spec.snap_baseline = true;
    spec.seed_sigma_min = 2.0;
    spec.seed_sigma_max = 3.0;
    spec.rules.surgery_extent = 0.4;
    // Patient 1 of the default seed keeps a visible lesion at every follow-up.
    const PatientRecord p = simulate_and_render(spec, 1).record;
    ASSERT_GT(p.observations.back().area_mm2, 0.0);
    RolloutConfig cfg;
    cfg.steps_per_day = 1;
    cfg.assimilation_alpha = 1.0;
    LossConfig lc;
    lc.soft_temp = 0.01;
    lc.all_followups = true;
    OptimConfig oc;
    oc.max_iters = 300;
    oc.train_weights = false;
    oc.train_params = {true, true, true, false, false};
    ModelState init;
    init.params = spec.truth;
    init.params.D = 0.15;
    init.params.k = 0.035;
    init.params.alpha_ct = 0.15;
    const FitResult r = fit(std::vector<PatientRecord>{p}, init, oc, lc, cfg);
    EXPECT_NEAR(r.params.D / spec.truth.D, 1.0, 0.2) << r.params.D;
    EXPECT_NEAR(r.params.k / spec.truth.k, 1.0, 0.2) << r.params.k;
}

TEST(Kfold, PartitionLaws) {
    for (std::size_t n : {5u, 12u, 23u}) {
        for (int k : {2, 3, 5}) {
            const auto folds = kfold_split(n, k, 9);
            ASSERT_EQ(folds.size(), static_cast<std::size_t>(k));
            std::multiset<std::size_t> all_val;
            for (const auto& f : folds) {
                EXPECT_EQ(f.train.size() + f.val.size(), n);
                std::set<std::size_t> tr(f.train.begin(), f.train.end());
                for (auto v : f.val) {
                    EXPECT_EQ(tr.count(v), 0u);
                    all_val.insert(v);
                }
            }
            EXPECT_EQ(all_val.size(), n);
            EXPECT_EQ(std::set<std::size_t>(all_val.begin(), all_val.end()).size(), n);
        }
    }
}

TEST(Kfold, LeaveOneOutAndDeterminism) {
    const auto folds = kfold_split(6, 6, 1);
    for (const auto& f : folds) EXPECT_EQ(f.val.size(), 1u);
    const auto a = kfold_split(20, 5, 42), b = kfold_split(20, 5, 42);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].train, b[i].train);
        EXPECT_EQ(a[i].val, b[i].val);
    }
    EXPECT_THROW(kfold_split(3, 4, 0), ValidationError);
    EXPECT_THROW(kfold_split(3, 1, 0), ValidationError);
}

TEST(Config, Validation) {
    LossConfig lc;
    lc.soft_temp = 0.0;
    EXPECT_THROW(lc.validate(), ConfigError);
    OptimConfig oc;
    oc.clip_norm = 0.0;
    EXPECT_THROW(oc.validate(), ConfigError);
    oc = OptimConfig{};
    oc.beta1 = 1.0;
    EXPECT_THROW(oc.validate(), ConfigError);
}
