#include "soctwin/therapy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soctwin/error.hpp"

namespace soctwin {

std::string_view to_string(KillMode mode) noexcept {
    switch (mode) {
        case KillMode::Additive: return "additive";
        case KillMode::Saturation: return "saturation";
        case KillMode::Synergy: return "synergy";
    }
    return "additive";
}

std::string_view to_string(SurgeryMode mode) noexcept {
    switch (mode) {
        case SurgeryMode::Mul: return "mul";
        case SurgeryMode::MorphOp: return "morph_op";
        case SurgeryMode::Rim: return "rim";
    }
    return "mul";
}

KillMode parse_kill_mode(std::string_view text) {
    if (text == "additive") return KillMode::Additive;
    if (text == "saturation") return KillMode::Saturation;
    if (text == "synergy") return KillMode::Synergy;
    throw ValidationError("unknown kill mode '" + std::string(text) + "'", "kill_mode");
}

SurgeryMode parse_surgery_mode(std::string_view text) {
    if (text == "mul") return SurgeryMode::Mul;
    if (text == "morph_op" || text == "morphop") return SurgeryMode::MorphOp;
    if (text == "rim") return SurgeryMode::Rim;
    throw ValidationError("unknown surgery mode '" + std::string(text) + "'", "surgery_mode");
}

void TreatmentTimeline::validate() const {
    auto check_sorted = [](const auto& events, auto day_of, const char* what) {
        for (std::size_t i = 0; i < events.size(); ++i) {
            const double d = day_of(events[i]);
            if (!std::isfinite(d)) throw ValidationError(std::string(what) + " day is not finite", what);
            if (i > 0 && d < day_of(events[i - 1])) {
                throw ValidationError(std::string(what) + " events are not sorted by day", what);
            }
        }
    };
    check_sorted(surgeries, [](const SurgeryEvent& e) { return e.day; }, "surgery");
    check_sorted(rt, [](const RtFraction& e) { return e.day; }, "rt");
    check_sorted(chemo, [](const ChemoCourse& e) { return e.start_day; }, "chemo");

    for (const auto& s : surgeries) {
        if (s.erosion_radius < 0 || s.rim_width < 0) throw ValidationError("surgery radii must be >= 0", "surgery");
        if (!(s.extent >= 0.0 && s.extent <= 1.0)) throw ValidationError("surgery extent must lie in [0,1]", "surgery");
        if (s.resection) {
            for (double r : s.resection->values()) {
                if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("resection fraction outside [0,1]", "resection");
            }
        }
    }
    for (const auto& f : rt) {
        if (!(f.dose >= 0.0) || !std::isfinite(f.dose)) throw ValidationError("rt dose must be >= 0", "rt");
    }
    for (const auto& c : chemo) {
        if (!(c.amplitude >= 0.0) || !(c.decay_rate >= 0.0) || !std::isfinite(c.amplitude) ||
            !std::isfinite(c.decay_rate)) {
            throw ValidationError("chemo amplitude and decay rate must be >= 0", "chemo");
        }
    }
    if (!(synergy_gain >= 0.0) || !(saturation_half >= 0.0)) {
        throw ValidationError("kill-mode parameters must be >= 0", "kill_mode");
    }
}

bool TreatmentTimeline::rt_active(double t) const noexcept {
    if (rt.empty()) return false;
    return t >= rt.front().day && t <= rt.back().day;
}

double chemo_exposure(const TreatmentTimeline& tl, double t) {
    double c = 0.0;
    for (const auto& course : tl.chemo) {
        if (course.start_day <= t) c += course.amplitude * std::exp(-course.decay_rate * (t - course.start_day));
    }
    return c;
}

double kill_gain(const TreatmentTimeline& tl, double t, bool rt_active) {
    const double c = chemo_exposure(tl, t);
    switch (tl.kill_mode) {
        case KillMode::Additive: return c;
        case KillMode::Saturation:
            if (!(tl.saturation_half > 0.0)) throw ConfigError("saturation kill mode requires saturation_half > 0");
            return c / (1.0 + c / tl.saturation_half);
        case KillMode::Synergy: return c * (1.0 + tl.synergy_gain * (rt_active ? 1.0 : 0.0));
    }
    return c;
}

double effective_kill_rate(const TreatmentTimeline& tl, double alpha_ct, double t, bool rt_active) {
    if (!(alpha_ct >= 0.0)) throw ValidationError("alpha_ct must be >= 0", "alpha_ct");
    return alpha_ct * kill_gain(tl, t, rt_active);
}

double rt_survival(double dose, double alpha_rt, double beta_rt) {
    return std::exp(-alpha_rt * dose - beta_rt * dose * dose);
}

ScalarField surgery_multiplier(const SurgeryEvent& ev, const BinaryMask& tumor_mask, int width, int height,
                               double spacing) {
    if (tumor_mask.width != width || tumor_mask.height != height) {
        throw ShapeError("surgery: tumour mask and field differ in shape");
    }
    ScalarField keep(width, height, spacing, 1.0);
    switch (ev.mode) {
        case SurgeryMode::Mul:
            if (ev.resection) {
                if (ev.resection->width() != width || ev.resection->height() != height) {
                    throw ShapeError("surgery: resection field and state differ in shape");
                }
                for (std::size_t i = 0; i < keep.size(); ++i) {
                    const double r = (*ev.resection)[i];
                    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("resection fraction outside [0,1]", "resection");
                    keep[i] = 1.0 - r;
                }
            } else {
                if (!(ev.extent >= 0.0 && ev.extent <= 1.0)) {
                    throw ValidationError("surgery extent must lie in [0,1]", "extent");
                }
                for (std::size_t i = 0; i < keep.size(); ++i) {
                    if (tumor_mask.at(i)) keep[i] = 1.0 - ev.extent;
                }
            }
            break;
        case SurgeryMode::MorphOp:
        case SurgeryMode::Rim: {
            // Clearance = tumour mask plus a Chebyshev margin.
            const int radius = ev.mode == SurgeryMode::MorphOp ? ev.erosion_radius : ev.rim_width;
            const BinaryMask cleared = dilate(tumor_mask, radius);
            for (std::size_t i = 0; i < keep.size(); ++i) {
                if (cleared.at(i)) keep[i] = 0.0;
            }
            break;
        }
    }
    return keep;
}

ScalarField apply_surgery(const ScalarField& n, const SurgeryEvent& ev, const BinaryMask& tumor_mask) {
    const ScalarField keep = surgery_multiplier(ev, tumor_mask, n.width(), n.height(), n.spacing());
    ScalarField out = n;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
    return out;
}

ScalarField apply_rt_fraction(const ScalarField& n, const RtFraction& fr, double alpha_rt, double beta_rt) {
    if (!(fr.dose >= 0.0) || !(alpha_rt >= 0.0) || !(beta_rt >= 0.0)) {
        throw ValidationError("rt: dose and radiosensitivities must be >= 0", "rt");
    }
    const double s = rt_survival(fr.dose, alpha_rt, beta_rt);
    ScalarField out = n;
    for (double& v : out.values()) v *= s;
    return out;
}

}  // namespace soctwin
