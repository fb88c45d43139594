#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "soctwin/grid.hpp"
#include "soctwin/params.hpp"
#include "soctwin/personalize.hpp"
#include "soctwin/therapy.hpp"

namespace soctwin {

/// Per-voxel multipliers on D and k (white/grey matter, glandular tissue...).
struct TissueMap {
    ScalarField diffusion;
    ScalarField proliferation;

    void validate(const DomainMask& domain) const;

    friend bool operator==(const TissueMap&, const TissueMap&) = default;
};

struct Anatomy {
    DomainMask domain;
    double spacing = 1.0;  // mm per voxel
    std::optional<TissueMap> tissue;

    int width() const noexcept { return domain.width(); }
    int height() const noexcept { return domain.height(); }

    friend bool operator==(const Anatomy&, const Anatomy&) = default;
};

struct Observation {
    double day = 0.0;
    BinaryMask mask;
    // Paths relative to the patient directory; empty for in-memory records.
    std::string mask_path;
    std::string image_path;
    double area_mm2 = 0.0;
    double recist_mm = 0.0;

    friend bool operator==(const Observation&, const Observation&) = default;
};

/// Synthetic ground truth stored next to generated patients.
struct GroundTruth {
    BioParams params;
    std::vector<std::pair<double, double>> volume_curve;  // (day, mm^2), daily

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct PatientRecord {
    std::string id;
    Covariates covariates;
    TreatmentTimeline timeline;
    std::vector<Observation> observations;
    Anatomy anatomy;
    std::optional<GroundTruth> truth;

    /// Observations strictly increasing in day, masks shaped like the
    /// anatomy, timeline valid.
    void validate() const;

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

}  // namespace soctwin
