#pragma once

namespace soctwin {

/// Biophysical scalars of the reaction-diffusion model.
struct BioParams {
    double D = 0.1;          // mm^2/day
    double k = 0.05;         // 1/day
    double theta = 1.0;      // carrying capacity
    double alpha_ct = 0.1;   // 1/day per exposure unit
    double alpha_rt = 0.03;  // 1/Gy
    double beta_rt = 0.003;  // 1/Gy^2

    /// Throws ValidationError unless D, k >= 0, theta > 0 and the kill
    /// coefficients are >= 0 (all finite).
    void validate() const;

    friend bool operator==(const BioParams&, const BioParams&) = default;
};

}  // namespace soctwin
