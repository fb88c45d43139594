#include "soctwin/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soctwin/error.hpp"

namespace soctwin {

void BioParams::validate() const {
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(D)) throw ValidationError("D must be finite and >= 0", "D");
    if (!finite_nonneg(k)) throw ValidationError("k must be finite and >= 0", "k");
    if (!(std::isfinite(theta) && theta > 0.0)) throw ValidationError("theta must be finite and > 0", "theta");
    if (!finite_nonneg(alpha_ct)) throw ValidationError("alpha_ct must be finite and >= 0", "alpha_ct");
    if (!finite_nonneg(alpha_rt)) throw ValidationError("alpha_rt must be finite and >= 0", "alpha_rt");
    if (!finite_nonneg(beta_rt)) throw ValidationError("beta_rt must be finite and >= 0", "beta_rt");
}

std::string_view to_string(CancerKind kind) noexcept {
    switch (kind) {
        case CancerKind::AG: return "AG";
        case CancerKind::HCC: return "HCC";
        case CancerKind::NAC: return "NAC";
    }
    return "AG";
}

CancerKind parse_cancer_kind(std::string_view text) {
    if (text == "AG" || text == "ag") return CancerKind::AG;
    if (text == "HCC" || text == "hcc") return CancerKind::HCC;
    if (text == "NAC" || text == "nac") return CancerKind::NAC;
    throw ValidationError("unknown cancer kind '" + std::string(text) + "'", "kind");
}

const std::array<std::string_view, kMarkerSlots>& marker_slots(CancerKind kind) {
    static const std::array<std::string_view, kMarkerSlots> ag{"MGMT_methylated", "IDH_mutant", "1p19q_codeleted",
                                                               "ATRX_loss", "EGFR_amplified"};
    static const std::array<std::string_view, kMarkerSlots> nac{"ER_positive", "PR_positive", "HER2_positive", "", ""};
    static const std::array<std::string_view, kMarkerSlots> hcc{"BCLC_B", "BCLC_C", "", "", ""};
    switch (kind) {
        case CancerKind::AG: return ag;
        case CancerKind::NAC: return nac;
        case CancerKind::HCC: return hcc;
    }
    return ag;
}

const std::array<int, 3>& grade_levels(CancerKind kind) {
    static const std::array<int, 3> who{2, 3, 4};
    static const std::array<int, 3> one_to_three{1, 2, 3};
    return kind == CancerKind::AG ? who : one_to_three;
}

bool Covariates::marker(std::string_view name) const {
    const auto it = markers.find(std::string(name));
    return it != markers.end() && it->second;
}

std::vector<double> Covariates::features() const {
    if (!(age_years > 0.0 && age_years <= 120.0)) throw ValidationError("age must lie in (0, 120] years", "age");
    const auto& levels = grade_levels(kind);
    const auto g = std::find(levels.begin(), levels.end(), grade);
    if (g == levels.end()) throw ValidationError("grade " + std::to_string(grade) + " invalid for kind", "grade");

    std::vector<double> f(kFeatureCount, 0.0);
    f[0] = age_years / 100.0;
    f[1 + static_cast<std::size_t>(g - levels.begin())] = 1.0;
    const auto& slots = marker_slots(kind);
    for (std::size_t s = 0; s < kMarkerSlots; ++s) {
        f[4 + s] = (!slots[s].empty() && marker(slots[s])) ? 1.0 : 0.0;
    }
    return f;
}

ModulatorWeights ModulatorWeights::zeros(int input_dim, int hidden) {
    ModulatorWeights w;
    w.input_dim = input_dim;
    w.hidden = hidden;
    w.w1.assign(static_cast<std::size_t>(input_dim * hidden), 0.0);
    w.b1.assign(static_cast<std::size_t>(hidden), 0.0);
    w.w2.assign(static_cast<std::size_t>(hidden * 3), 0.0);
    w.b2.assign(3, 0.0);
    return w;
}

std::vector<double> ModulatorWeights::flat() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    out.insert(out.end(), w1.begin(), w1.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.begin(), w2.end());
    out.insert(out.end(), b2.begin(), b2.end());
    return out;
}

void ModulatorWeights::assign_flat(std::span<const double> values) {
    if (values.size() != parameter_count()) throw ShapeError("modulator: flat weight vector has wrong length");
    auto it = values.begin();
    for (auto* part : {&w1, &b1, &w2, &b2}) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(part->size()), part->begin());
        it += static_cast<std::ptrdiff_t>(part->size());
    }
}

void ModulatorWeights::validate() const {
    if (input_dim <= 0 || hidden <= 0) throw ShapeError("modulator dimensions must be positive");
    if (w1.size() != static_cast<std::size_t>(input_dim * hidden) || b1.size() != static_cast<std::size_t>(hidden) ||
        w2.size() != static_cast<std::size_t>(hidden * 3) || b2.size() != 3) {
        throw ShapeError("modulator weight arrays do not match input_dim/hidden");
    }
    for (const auto* part : {&w1, &b1, &w2, &b2}) {
        for (double v : *part) {
            if (!std::isfinite(v)) throw ValidationError("modulator weights must be finite", "weights");
        }
    }
    if (!(clamp_lo > 0.0 && clamp_lo <= 1.0 && clamp_hi >= 1.0 && std::isfinite(clamp_hi))) {
        throw ValidationError("modulator clamp must satisfy 0 < lo <= 1 <= hi", "clamp");
    }
}

namespace {

struct Forward {
    std::vector<double> h;  // tanh activations
    std::array<double, 3> raw{};  // exp(o) before clamping
    Modulation mod;
};

Forward forward(std::span<const double> z, const ModulatorWeights& w) {
    w.validate();
    if (z.size() != static_cast<std::size_t>(w.input_dim)) {
        throw ShapeError("modulator: feature vector has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(w.input_dim));
    }
    const auto H = static_cast<std::size_t>(w.hidden);
    Forward f;
    f.h.assign(H, 0.0);
    for (std::size_t j = 0; j < H; ++j) {
        double s = w.b1[j];
        for (std::size_t i = 0; i < z.size(); ++i) s += z[i] * w.w1[i * H + j];
        f.h[j] = std::tanh(s);
    }
    for (std::size_t c = 0; c < 3; ++c) {
        double o = w.b2[c];
        for (std::size_t j = 0; j < H; ++j) o += f.h[j] * w.w2[j * 3 + c];
        f.raw[c] = std::exp(o);
        f.mod.clamped[c] = f.raw[c] < w.clamp_lo || f.raw[c] > w.clamp_hi;
        f.mod.multiplier[c] = std::clamp(f.raw[c], w.clamp_lo, w.clamp_hi);
    }
    return f;
}

}  // namespace

Modulation modulator_output(std::span<const double> features, const ModulatorWeights& w) {
    return forward(features, w).mod;
}

BioParams modulate(std::span<const double> features, const ModulatorWeights& w, const BioParams& base) {
    const Modulation m = modulator_output(features, w);
    BioParams out = base;
    out.D = base.D * m.multiplier[0];
    out.k = base.k * m.multiplier[1];
    out.alpha_ct = base.alpha_ct * m.multiplier[2];
    return out;
}

BioParams modulate(const Covariates& z, const ModulatorWeights& w, const BioParams& base) {
    const auto f = z.features();
    return modulate(f, w, base);
}

ModulatorJacobian modulator_jacobian(std::span<const double> z, const ModulatorWeights& w, const BioParams& base) {
    const Forward f = forward(z, w);
    const auto H = static_cast<std::size_t>(w.hidden);
    const std::size_t I = z.size();
    const std::size_t off_b1 = I * H;
    const std::size_t off_w2 = off_b1 + H;
    const std::size_t off_b2 = off_w2 + H * 3;

    ModulatorJacobian jac;
    jac.cols = w.parameter_count();
    const std::array<double, 3> scale{base.D, base.k, base.alpha_ct};
    for (std::size_t c = 0; c < 3; ++c) {
        auto& row = jac.rows[c];
        row.assign(jac.cols, 0.0);
        if (f.mod.clamped[c]) continue;
        const double dm = scale[c] * f.raw[c];  // d(param)/d(o_c)
        row[off_b2 + c] = dm;
        for (std::size_t j = 0; j < H; ++j) {
            row[off_w2 + j * 3 + c] = dm * f.h[j];
            const double ds = dm * w.w2[j * 3 + c] * (1.0 - f.h[j] * f.h[j]);
            row[off_b1 + j] = ds;
            for (std::size_t i = 0; i < I; ++i) row[i * H + j] = ds * z[i];
        }
    }
    return jac;
}

}  // namespace soctwin
