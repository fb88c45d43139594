#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "soctwin/grid.hpp"
#include "soctwin/params.hpp"
#include "soctwin/patient.hpp"
#include "soctwin/therapy.hpp"

namespace soctwin {

struct RolloutConfig {
    int steps_per_day = 2;
    double assimilation_alpha = 0.5;
    double threshold_tau = 0.5;
    double obs_density_level = 1.0;  // fraction of theta given to observed-mask voxels
    CgOptions cg{};
    // Overrides of the timeline's own selectors.
    std::optional<KillMode> kill_mode;
    std::optional<SurgeryMode> surgery_mode;
    // False drops every treatment term (chemo, RT, surgery): the growth-only
    // ablation.
    bool treatment_enabled = true;

    void validate() const;
};

struct TwinState {
    ScalarField field;
    double day = 0.0;
};

/// Discretised anatomy: the Laplacian plus the optional proliferation map.
class SpatialModel {
public:
    SpatialModel(const DomainMask& domain, double spacing);
    explicit SpatialModel(const Anatomy& anatomy);

    const LaplacianOperator& laplacian() const noexcept { return laplacian_; }
    const DomainMask& domain() const noexcept { return laplacian_.domain(); }
    double spacing() const noexcept { return laplacian_.spacing(); }
    /// Per-voxel multiplier on k, or nullptr for a homogeneous medium.
    const ScalarField* proliferation() const noexcept { return proliferation_ ? &*proliferation_ : nullptr; }

private:
    LaplacianOperator laplacian_;
    std::optional<ScalarField> proliferation_;
};

// --- forward record used by the discrete adjoint ---------------------------

struct TapeSubstep {
    double t0 = 0.0;
    double dt = 0.0;
    double kill_gain = 0.0;        // g(C(t0)); kill rate = alpha_ct * g
    ScalarField diffused;          // implicit-diffusion output = Riccati input
    std::vector<std::uint8_t> clamped;  // Riccati clamp active (empty when none)
};

struct TapeSurgery {
    ScalarField multiplier;
};

struct TapeRt {
    double dose = 0.0;
    double survival = 1.0;
    ScalarField post;  // state right after the jump
};

struct TapeAssimilation {
    double alpha = 1.0;
};

struct TapeObservation {
    std::size_t index = 0;  // into PatientRecord::observations
    ScalarField prediction;  // state before any assimilation at this day
};

using TapeEntry = std::variant<TapeSubstep, TapeSurgery, TapeRt, TapeAssimilation, TapeObservation>;

struct Tape {
    std::vector<TapeEntry> entries;
    BioParams params;  // parameters the forward pass ran with
    bool any_clamp = false;
    double min_clamp_margin = 0.0;  // closest approach of a Riccati output to {0, theta}, relative to theta
};

// --- operations -------------------------------------------------------------

/// (I - dt D L) x = n by CG; tiny negatives above -1e-9 theta are set to 0.
ScalarField implicit_diffusion_step(const ScalarField& n, double D, double dt, const LaplacianOperator& L,
                                    const RolloutConfig& cfg, double theta = 1.0);

/// Exact solution of dN/dt = a N - b N^2 over dt starting from x >= 0,
/// evaluated as x / (exp(-a dt) + b x (1 - exp(-a dt)) / a) which is total
/// in a (the a -> 0 limit is x / (1 + b x dt)).
double riccati_flow(double x, double a, double b, double dt);

struct RiccatiPartials {
    double value = 0.0;
    double d_x = 0.0;
    double d_a = 0.0;
    double d_b = 0.0;
};
RiccatiPartials riccati_partials(double x, double a, double b, double dt);

/// Voxelwise Riccati update with a = k m_i - kill_rate, b = k m_i / theta,
/// clamped to [0, theta]. `proliferation` (m_i) defaults to 1.
ScalarField riccati_step(const ScalarField& n, double k, double theta, double kill_rate, double dt,
                         const ScalarField* proliferation = nullptr);

/// u <- alpha u + (1 - alpha) level * mask, restricted to the domain.
ScalarField assimilate(const ScalarField& u, const BinaryMask& obs, double alpha, double level,
                       const DomainMask* domain = nullptr);

/// Advance from state.day to to_day. Spans between event days take
/// ceil(span * steps_per_day) equal sub-steps of implicit diffusion followed
/// by the Riccati reaction with the kill rate frozen at the sub-step start.
/// Events with day in [state.day, to_day) fire when the clock reaches them,
/// surgeries before RT fractions on the same day.
TwinState step_interval(const TwinState& state, double to_day, const BioParams& params, const TreatmentTimeline& tl,
                        const SpatialModel& model, const RolloutConfig& cfg, Tape* tape = nullptr);

/// Forward-Euler reference integrator with the same event handling. `dt`
/// must satisfy dt <= 0.9 dx^2 / (4 D max m) or ConfigError is thrown.
TwinState explicit_oracle_rollout(const TwinState& state, double to_day, const BioParams& params,
                                  const TreatmentTimeline& tl, const SpatialModel& model, const RolloutConfig& cfg,
                                  double dt);

/// Initial state from an observed mask: level * theta on mask voxels.
ScalarField field_from_mask(const BinaryMask& mask, const Anatomy& anatomy, double level);

struct RolloutFrame {
    double day = 0.0;
    ScalarField field;       // post-assimilation where applied
    ScalarField prediction;  // model state before assimilation
};

/// Start at the first observation, integrate observation to observation,
/// assimilate at every intermediate observation. One frame per observation.
std::vector<RolloutFrame> rollout(const PatientRecord& patient, const BioParams& params, const RolloutConfig& cfg,
                                  Tape* tape = nullptr);

struct ForecastOptions {
    double horizon_day = 0.0;
    std::vector<double> sample_days;  // must lie in [first observation, horizon]
};

/// rollout() continued to an arbitrary horizon with extra sampling days.
/// Observations after the horizon are ignored; the last observation is
/// never assimilated.
std::vector<TwinState> forecast(const PatientRecord& patient, const BioParams& params, const RolloutConfig& cfg,
                                const ForecastOptions& options);

}  // namespace soctwin
