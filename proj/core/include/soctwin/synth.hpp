#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "soctwin/grid.hpp"
#include "soctwin/params.hpp"
#include "soctwin/patient.hpp"
#include "soctwin/personalize.hpp"
#include "soctwin/rng.hpp"
#include "soctwin/store.hpp"
#include "soctwin/therapy.hpp"

namespace soctwin {

struct RenderOptions {
    bool bias_field = true;
    double noise_sigma = 0.02;     // Rician sigma, image units
    double lowpass = 0.6;          // kept fraction of the Nyquist band; >= 1 disables
    double boundary_jitter = 0.05;  // flip probability of mask-boundary voxels

    friend bool operator==(const RenderOptions&, const RenderOptions&) = default;
};

/// Treatment rule table for one cancer kind. Day offsets are in days.
struct TimelineRules {
    bool surgery = true;
    double surgery_min = 5.0;
    double surgery_max = 15.0;
    double surgery_extent = 1.0;
    SurgeryMode surgery_mode = SurgeryMode::Mul;
    bool surgery_first = true;          // false: chemo precedes surgery (neoadjuvant)
    int rt_fractions = 30;
    double rt_dose = 2.0;               // Gy
    double rt_delay = 14.0;             // after surgery (or after chemo when neoadjuvant)
    bool rt_weekdays_only = true;
    int chemo_cycles = 1;               // > 1: repeated courses every chemo_cycle_days
    double chemo_cycle_days = 21.0;
    double chemo_amplitude = 1.0;
    double chemo_half_life = 7.0;       // days; 0 gives a constant exposure
    bool chemo_with_rt = true;          // chemo starts with RT (concurrent)
    bool impulse_train = false;         // weekly short pulses instead of one decaying course
    std::string chemo_kind = "TMZ";

    friend bool operator==(const TimelineRules&, const TimelineRules&) = default;
};

TimelineRules default_rules(CancerKind kind);

struct CohortSpec {
    CancerKind kind = CancerKind::AG;
    int n_patients = 20;
    int width = 48;
    int height = 48;
    double spacing = 1.0;  // mm
    // Fixed scan calendar (days, strictly increasing, first = 0); empty
    // samples the kind's protocol.
    std::vector<double> scan_days;
    std::uint64_t seed = 0;
    RenderOptions render;
    TimelineRules rules = default_rules(CancerKind::AG);
    BioParams truth;
    double param_jitter = 0.0;      // lognormal sigma on D, k, alpha_ct per patient
    bool covariate_effects = false;  // markers shift the per-patient truth
    bool tissue_maps = true;
    int steps_per_day = 2;
    double tau = 0.5;
    double seed_sigma_min = 2.0;  // Gaussian tumour seed width, voxels
    double seed_sigma_max = 3.5;
    // Untreated growth before the first scan, so the day-0 tumour has a
    // developed front instead of the raw seed profile.
    double pre_growth_days = 30.0;
    // Replace the baseline state by theta on its >= tau theta region, the
    // state a mask-initialised twin starts from.
    bool snap_baseline = false;

    void validate() const;
    std::string to_json() const;
    static CohortSpec from_json(const std::string& text);
    friend bool operator==(const CohortSpec&, const CohortSpec&) = default;
};

struct Phantom {
    DomainMask domain;
    TissueMap tissue;
    ScalarField base_image;  // tumour-free intensity
};

/// Kind-specific silhouette with two-region tissue multipliers in [0.5, 2].
Phantom gen_phantom(CancerKind kind, int width, int height, double spacing, std::uint64_t seed);

/// Bernoulli / categorical draws at the synthetic cohort frequencies.
Covariates sample_covariates(CancerKind kind, std::uint64_t seed);

TreatmentTimeline sample_timeline(CancerKind kind, const Covariates& covariates, std::uint64_t seed,
                                  const TimelineRules& rules);
TreatmentTimeline sample_timeline(CancerKind kind, const Covariates& covariates, std::uint64_t seed);

/// Per-patient ground truth: spec.truth, optionally jittered and shifted by
/// covariate effects.
BioParams patient_truth(const CohortSpec& spec, const Covariates& covariates, Rng& rng);

// Image corruption stages; each is the identity at its neutral setting.
ScalarField apply_bias_field(const ScalarField& image, Rng& rng, double strength = 0.1);
ScalarField lowpass_filter(const ScalarField& image, double fraction);
ScalarField rician_noise(const ScalarField& image, double sigma, Rng& rng);

/// Flips mask-boundary voxels inside the domain with probability p.
BinaryMask jitter_boundary(const BinaryMask& mask, const DomainMask& domain, double p, Rng& rng);

struct SyntheticPatient {
    PatientRecord record;
    std::vector<ScalarField> images;  // one per observation
    std::vector<ScalarField> fields;  // true density at each scan
};

/// Seeds a Gaussian tumour, simulates the protocol with the true
/// parameters and renders masks and images at every scan day.
SyntheticPatient simulate_and_render(const CohortSpec& spec, int patient_idx);

std::string patient_id(CancerKind kind, int patient_idx);

/// Writes every patient plus manifest.json under `out_dir` and returns the
/// manifest (with hash). Patients are independent; `threads` only changes
/// wall time.
CohortManifest gen_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir, int threads = 1);

}  // namespace soctwin
