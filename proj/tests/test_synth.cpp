#include <gtest/gtest.h>

#include <cmath>

#include "soctwin/error.hpp"
#include "soctwin/metrics.hpp"
#include "soctwin/synth.hpp"
#include "support.hpp"

using namespace soctwin;
using namespace soctwin::test;

namespace {

CohortSpec small_spec(int n = 1) {
    CohortSpec spec;
    spec.n_patients = n;
    spec.width = 32;
    spec.height = 32;
    spec.seed = 99;
    return spec;
}

}  // namespace

TEST(Phantom, DeterministicAndSized) {
    for (auto kind : {CancerKind::AG, CancerKind::HCC, CancerKind::NAC}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const Phantom a = gen_phantom(kind, 48, 40, 1.0, seed);
            const Phantom b = gen_phantom(kind, 48, 40, 1.0, seed);
            EXPECT_EQ(a.domain, b.domain);
            EXPECT_EQ(a.tissue, b.tissue);
            const double frac = static_cast<double>(a.domain.count()) / static_cast<double>(a.domain.size());
            EXPECT_GE(frac, 0.2);
            EXPECT_LE(frac, 0.8);
            for (std::size_t i = 0; i < a.domain.size(); ++i) {
                if (!a.domain.inside(i)) continue;
                EXPECT_GE(a.tissue.diffusion[i], 0.5);
                EXPECT_LE(a.tissue.diffusion[i], 2.0);
                EXPECT_GE(a.tissue.proliferation[i], 0.5);
                EXPECT_LE(a.tissue.proliferation[i], 2.0);
            }
        }
    }
}

TEST(Covariates, DeterministicAndTableFrequencies) {
    EXPECT_EQ(sample_covariates(CancerKind::AG, 5), sample_covariates(CancerKind::AG, 5));
    const int n = 2000;
    int idh = 0, mgmt = 0;
    for (int i = 0; i < n; ++i) {
        const Covariates c = sample_covariates(CancerKind::AG, mix_seed(1234, static_cast<std::uint64_t>(i)));
        idh += c.marker("IDH_mutant");
        mgmt += c.marker("MGMT_methylated");
        EXPECT_GE(c.age_years, 30.0);
        EXPECT_LE(c.age_years, 80.0);
    }
    auto within = [n](int count, double p) {
        return std::abs(count - n * p) <= 3.0 * std::sqrt(n * p * (1 - p));
    };
    EXPECT_TRUE(within(idh, 64.0 / 200)) << idh;
    EXPECT_TRUE(within(mgmt, 83.0 / 200)) << mgmt;
}

TEST(Timeline, AgProtocol) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Covariates c = sample_covariates(CancerKind::AG, seed);
        const TreatmentTimeline tl = sample_timeline(CancerKind::AG, c, seed);
        ASSERT_EQ(tl.rt.size(), 30u);
        for (const auto& f : tl.rt) EXPECT_EQ(f.dose, 2.0);
        ASSERT_EQ(tl.surgeries.size(), 1u);
        EXPECT_GE(tl.surgeries[0].day, 5.0);
        EXPECT_LE(tl.surgeries[0].day, 15.0);
        EXPECT_LT(tl.surgeries[0].day, tl.rt.front().day);
        EXPECT_EQ(tl.rt.front().day, tl.surgeries[0].day + 14.0);
        ASSERT_FALSE(tl.chemo.empty());
        EXPECT_EQ(tl.chemo.front().start_day, tl.rt.front().day);
        EXPECT_NEAR(tl.chemo.front().decay_rate, std::log(2.0) / 7.0, 1e-15);
        EXPECT_NO_THROW(tl.validate());
        for (const auto& f : tl.rt) EXPECT_GE(f.day, 0.0);
    }
}

TEST(Timeline, OtherKindsValid) {
    for (auto kind : {CancerKind::HCC, CancerKind::NAC}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const TreatmentTimeline tl = sample_timeline(kind, sample_covariates(kind, seed), seed);
            EXPECT_NO_THROW(tl.validate());
        }
    }
}

TEST(Corruption, NeutralSettingsAreIdentity) {
    Rng rng(3);
    const ScalarField img = random_field(20, 16, 1.0, rng);
    EXPECT_EQ(lowpass_filter(img, 1.0), img);
    EXPECT_EQ(rician_noise(img, 0.0, rng), img);
    EXPECT_EQ(apply_bias_field(img, rng, 0.0), img);
    const ScalarField smooth = lowpass_filter(img, 0.3);
    EXPECT_NEAR(smooth.sum(), img.sum(), 1e-9);
}

TEST(Render, CleanImageWhenCorruptionOff) {
    CohortSpec spec = small_spec();
    spec.render.bias_field = false;
    spec.render.noise_sigma = 0.0;
    spec.render.lowpass = 1.0;
    const SyntheticPatient sp = simulate_and_render(spec, 0);
    const Phantom ph = gen_phantom(spec.kind, spec.width, spec.height, spec.spacing, mix_seed(mix_seed(spec.seed, 0), 2));
    for (std::size_t j = 0; j < sp.images.size(); ++j) {
        for (std::size_t i = 0; i < ph.base_image.size(); ++i) {
            const double clean = ph.base_image[i] + (ph.domain.inside(i) ? 0.4 * sp.fields[j][i] : 0.0);
            EXPECT_EQ(sp.images[j][i], clean);
        }
    }
}

TEST(Render, MasksInsideDomainAndAreasConsistent) {
    CohortSpec spec = small_spec();
    for (int idx = 0; idx < 3; ++idx) {
        const SyntheticPatient sp = simulate_and_render(spec, idx);
        const auto& rec = sp.record;
        EXPECT_GE(rec.observations.size(), 3u);
        for (const auto& o : rec.observations) {
            for (std::size_t i = 0; i < o.mask.size(); ++i) {
                if (o.mask.at(i)) {
                    EXPECT_TRUE(rec.anatomy.domain.inside(i));
                }
            }
            EXPECT_DOUBLE_EQ(o.area_mm2, mask_volume(o.mask, spec.spacing));
            EXPECT_DOUBLE_EQ(o.recist_mm, max_feret_diameter(o.mask, spec.spacing));
        }
        ASSERT_TRUE(rec.truth.has_value());
        EXPECT_EQ(rec.truth->params, spec.truth);
    }
}

TEST(Render, RtOnlyWithoutGrowthNeverEnlarges) {
    CohortSpec spec = small_spec();
    spec.truth.k = 0.0;
    spec.truth.D = 0.01;
    spec.truth.alpha_rt = 0.2;
    spec.rules.surgery = false;
    spec.rules.chemo_amplitude = 0.0;
    spec.render.boundary_jitter = 0.0;
    spec.scan_days = {0, 5, 25, 30, 40, 50, 60};
    const SyntheticPatient sp = simulate_and_render(spec, 0);
    const auto& obs = sp.record.observations;
    for (std::size_t j = 1; j < obs.size(); ++j) EXPECT_LE(obs[j].area_mm2, obs[j - 1].area_mm2);
    EXPECT_LT(obs.back().area_mm2, obs.front().area_mm2);
}

TEST(Render, DeterministicPerSeed) {
    const CohortSpec spec = small_spec();
    const SyntheticPatient a = simulate_and_render(spec, 2), b = simulate_and_render(spec, 2);
    EXPECT_EQ(a.record, b.record);
    EXPECT_EQ(a.images, b.images);
    CohortSpec other = spec;
    other.seed = 100;
    EXPECT_NE(simulate_and_render(other, 2).record.observations.back().mask, a.record.observations.back().mask);
}

TEST(Cohort, SinglePatientManifestAndHashReplay) {
    TempDir d1("gen"), d2("gen");
    const CohortSpec spec = small_spec(1);
    const CohortManifest m1 = gen_cohort(spec, d1.path());
    const CohortManifest m2 = gen_cohort(spec, d2.path(), 2);
    ASSERT_EQ(m1.patients.size(), 1u);
    EXPECT_GE(m1.patients[0].scan_days.size(), 3u);
    EXPECT_EQ(m1.hash, m2.hash);
    const Cohort c = load_cohort(d1.path(), true);
    const PatientRecord direct = simulate_and_render(spec, 0).record;
    EXPECT_EQ(c.patients[0].observations, direct.observations);
    EXPECT_EQ(c.patients[0].timeline, direct.timeline);
    EXPECT_EQ(c.patients[0].covariates, direct.covariates);
}

TEST(Cohort, ThreadCountDoesNotChangeOutput) {
    TempDir d1("gen"), d2("gen");
    const CohortSpec spec = small_spec(4);
    EXPECT_EQ(gen_cohort(spec, d1.path(), 1).hash, gen_cohort(spec, d2.path(), 3).hash);
}

TEST(Spec, JsonRoundTripAndValidation) {
    CohortSpec spec = small_spec(7);
    spec.kind = CancerKind::NAC;
    spec.scan_days = {0, 10, 20};
    spec.snap_baseline = true;
    spec.pre_growth_days = 12.5;
    spec.rules = default_rules(CancerKind::NAC);
    EXPECT_EQ(CohortSpec::from_json(spec.to_json()), spec);
    CohortSpec bad = spec;
    bad.n_patients = 0;
    EXPECT_THROW(bad.validate(), Error);
    bad = spec;
    bad.scan_days = {0, 10, 10};
    EXPECT_THROW(bad.validate(), Error);
    bad = spec;
    bad.width = 16;
    EXPECT_THROW(bad.validate(), Error);
}
