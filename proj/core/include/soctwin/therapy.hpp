#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "soctwin/grid.hpp"

namespace soctwin {

enum class KillMode { Additive, Saturation, Synergy };
enum class SurgeryMode { Mul, MorphOp, Rim };

std::string_view to_string(KillMode mode) noexcept;
std::string_view to_string(SurgeryMode mode) noexcept;
KillMode parse_kill_mode(std::string_view text);
SurgeryMode parse_surgery_mode(std::string_view text);

/// Exponentially decaying exposure pulse starting at start_day.
/// decay_rate == 0 gives a constant exposure from start_day onward.
struct ChemoCourse {
    double start_day = 0.0;
    double amplitude = 1.0;
    double decay_rate = 0.0;  // 1/day
    std::string kind = "TMZ";

    friend bool operator==(const ChemoCourse&, const ChemoCourse&) = default;
};

struct RtFraction {
    double day = 0.0;
    double dose = 2.0;  // Gy

    friend bool operator==(const RtFraction&, const RtFraction&) = default;
};

struct SurgeryEvent {
    double day = 0.0;
    SurgeryMode mode = SurgeryMode::Mul;
    // Mul: explicit per-voxel resection fraction R in [0,1]. When absent the
    // resection is `extent` on the thresholded tumour mask at event time.
    std::optional<ScalarField> resection;
    double extent = 1.0;
    int erosion_radius = 1;  // MorphOp margin, voxels
    int rim_width = 1;       // Rim clearance, voxels

    friend bool operator==(const SurgeryEvent&, const SurgeryEvent&) = default;
};

struct TreatmentTimeline {
    std::vector<SurgeryEvent> surgeries;
    std::vector<RtFraction> rt;
    std::vector<ChemoCourse> chemo;
    KillMode kill_mode = KillMode::Additive;
    double synergy_gain = 0.5;
    double saturation_half = 1.0;

    /// Throws ValidationError on unsorted events or out-of-range parameters.
    void validate() const;

    /// True when t lies within [first RT day, last RT day].
    bool rt_active(double t) const noexcept;

    friend bool operator==(const TreatmentTimeline&, const TreatmentTimeline&) = default;
};

/// Sum of the decaying pulses of every course that has started by day t.
double chemo_exposure(const TreatmentTimeline& tl, double t);

/// Kill-rate gain g(C) such that kill = alpha_ct * g; linear in alpha_ct.
double kill_gain(const TreatmentTimeline& tl, double t, bool rt_active);

/// alpha_ct * g(C(t)) under the timeline's kill mode.
double effective_kill_rate(const TreatmentTimeline& tl, double alpha_ct, double t, bool rt_active);

/// Linear-quadratic survival exp(-alpha d - beta d^2).
double rt_survival(double dose, double alpha_rt, double beta_rt);

/// Per-voxel survival multiplier of a surgery event given the binary tumour
/// mask at event time. The jump is N+ = multiplier * N-.
ScalarField surgery_multiplier(const SurgeryEvent& ev, const BinaryMask& tumor_mask, int width, int height,
                               double spacing);

ScalarField apply_surgery(const ScalarField& n, const SurgeryEvent& ev, const BinaryMask& tumor_mask);
ScalarField apply_rt_fraction(const ScalarField& n, const RtFraction& fr, double alpha_rt, double beta_rt);

}  // namespace soctwin
