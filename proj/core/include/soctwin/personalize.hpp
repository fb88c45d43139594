#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soctwin/params.hpp"

namespace soctwin {

enum class CancerKind { AG, HCC, NAC };

std::string_view to_string(CancerKind kind) noexcept;
CancerKind parse_cancer_kind(std::string_view text);

/// Version tag of the covariate feature layout produced by Covariates::features().
inline constexpr std::string_view kFeatureManifest = "soctwin.features/1";
inline constexpr std::size_t kFeatureCount = 9;
inline constexpr std::size_t kMarkerSlots = 5;

/// Marker names that occupy the five binary feature slots for a cancer kind.
/// Empty names are unused slots and always encode 0.
const std::array<std::string_view, kMarkerSlots>& marker_slots(CancerKind kind);

/// Grade labels mapped onto the three one-hot slots (AG: WHO 2/3/4,
/// HCC: ALBI 1/2/3, NAC: histologic 1/2/3).
const std::array<int, 3>& grade_levels(CancerKind kind);

struct Covariates {
    CancerKind kind = CancerKind::AG;
    double age_years = 55.0;
    int grade = 4;
    std::map<std::string, bool> markers;

    bool marker(std::string_view name) const;

    /// [age/100, grade one-hot(3), 5 marker flags]. Throws ValidationError
    /// on an age outside (0, 120] or a grade not valid for the kind.
    std::vector<double> features() const;

    friend bool operator==(const Covariates&, const Covariates&) = default;
};

/// One hidden tanh layer; exp output clamped to [clamp_lo, clamp_hi]
/// produces multipliers on (D, k, alpha_ct).
struct ModulatorWeights {
    int input_dim = static_cast<int>(kFeatureCount);
    int hidden = 8;
    std::vector<double> w1;  // input_dim x hidden, row-major
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // hidden x 3, row-major
    std::vector<double> b2;  // 3
    double clamp_lo = 0.25;
    double clamp_hi = 4.0;

    static ModulatorWeights zeros(int input_dim = static_cast<int>(kFeatureCount), int hidden = 8);

    std::size_t parameter_count() const noexcept { return w1.size() + b1.size() + w2.size() + b2.size(); }
    /// Flattened as [w1, b1, w2, b2].
    std::vector<double> flat() const;
    void assign_flat(std::span<const double> values);

    void validate() const;

    friend bool operator==(const ModulatorWeights&, const ModulatorWeights&) = default;
};

struct Modulation {
    std::array<double, 3> multiplier{1.0, 1.0, 1.0};
    std::array<bool, 3> clamped{false, false, false};
};

Modulation modulator_output(std::span<const double> features, const ModulatorWeights& w);

/// base with D, k, alpha_ct scaled by the modulator; alpha_rt, beta_rt kept.
BioParams modulate(std::span<const double> features, const ModulatorWeights& w, const BioParams& base);
BioParams modulate(const Covariates& z, const ModulatorWeights& w, const BioParams& base);

/// d(D, k, alpha_ct)_modulated / d(flat weights); rows are the three
/// parameters, columns follow ModulatorWeights::flat(). Clamped outputs have
/// zero rows.
struct ModulatorJacobian {
    std::size_t cols = 0;
    std::array<std::vector<double>, 3> rows;
};

ModulatorJacobian modulator_jacobian(std::span<const double> features, const ModulatorWeights& w,
                                     const BioParams& base);

}  // namespace soctwin
