#include "soctwin/synth.hpp"

#include <fftw3.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

#include "json_codec.hpp"
#include "soctwin/error.hpp"
#include "soctwin/imex.hpp"
#include "soctwin/metrics.hpp"

namespace soctwin {

using codec::json;

TimelineRules default_rules(CancerKind kind) {
    TimelineRules r;
    switch (kind) {
        case CancerKind::AG:
            break;
        case CancerKind::NAC:
            r.surgery_first = false;
            r.rt_fractions = 25;
            r.chemo_cycles = 6;
            r.chemo_cycle_days = 21.0;
            r.chemo_half_life = 3.0;
            r.chemo_with_rt = false;
            r.chemo_kind = "AC-T";
            break;
        case CancerKind::HCC:
            r.rt_fractions = 5;
            r.rt_dose = 8.0;
            r.rt_delay = 28.0;
            r.chemo_amplitude = 0.3;
            r.chemo_half_life = 0.0;
            r.chemo_kind = "sorafenib";
            break;
    }
    return r;
}

// --- spec -------------------------------------------------------------------

void CohortSpec::validate() const {
    if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
    if (width < 32 || height < 32) throw ConfigError("grid must be at least 32x32");
    if (!(spacing > 0.0)) throw ConfigError("spacing must be > 0");
    if (!scan_days.empty()) {
        if (scan_days.size() < 2) throw ConfigError("a fixed scan calendar needs at least two days");
        if (!(scan_days.front() >= 0.0)) throw ConfigError("scan days must be >= 0");
        for (std::size_t i = 1; i < scan_days.size(); ++i) {
            if (!(scan_days[i] > scan_days[i - 1])) throw ConfigError("scan days must be strictly increasing");
        }
    }
    if (!(render.noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    if (!(render.lowpass > 0.0)) throw ConfigError("lowpass fraction must be > 0");
    if (!(render.boundary_jitter >= 0.0 && render.boundary_jitter <= 1.0)) {
        throw ConfigError("boundary jitter must lie in [0,1]");
    }
    truth.validate();
    if (!(param_jitter >= 0.0)) throw ConfigError("param_jitter must be >= 0");
    if (steps_per_day < 1) throw ConfigError("steps_per_day must be >= 1");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    if (!(seed_sigma_min > 0.0 && seed_sigma_max >= seed_sigma_min)) throw ConfigError("bad tumour seed width range");
    if (!(pre_growth_days >= 0.0)) throw ConfigError("pre_growth_days must be >= 0");
    if (rules.rt_fractions < 0 || rules.chemo_cycles < 0) throw ConfigError("rule counts must be >= 0");
    if (!(rules.surgery_max >= rules.surgery_min && rules.surgery_min >= 0.0)) {
        throw ConfigError("bad surgery window");
    }
}

namespace {

json rules_json(const TimelineRules& r) {
    return {{"surgery", r.surgery},
            {"surgery_min", r.surgery_min},
            {"surgery_max", r.surgery_max},
            {"surgery_extent", r.surgery_extent},
            {"surgery_mode", std::string(to_string(r.surgery_mode))},
            {"surgery_first", r.surgery_first},
            {"rt_fractions", r.rt_fractions},
            {"rt_dose", r.rt_dose},
            {"rt_delay", r.rt_delay},
            {"rt_weekdays_only", r.rt_weekdays_only},
            {"chemo_cycles", r.chemo_cycles},
            {"chemo_cycle_days", r.chemo_cycle_days},
            {"chemo_amplitude", r.chemo_amplitude},
            {"chemo_half_life", r.chemo_half_life},
            {"chemo_with_rt", r.chemo_with_rt},
            {"impulse_train", r.impulse_train},
            {"chemo_kind", r.chemo_kind}};
}

template <class T>
void take(const json& j, const char* key, T& out) {
    if (const auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("bad value for '") + key + "'");
        }
    }
}

}  // namespace

std::string CohortSpec::to_json() const {
    json j = {{"kind", std::string(to_string(kind))},
              {"n_patients", n_patients},
              {"width", width},
              {"height", height},
              {"spacing", spacing},
              {"scan_days", scan_days},
              {"seed", seed},
              {"render",
               {{"bias_field", render.bias_field},
                {"noise_sigma", render.noise_sigma},
                {"lowpass", render.lowpass},
                {"boundary_jitter", render.boundary_jitter}}},
              {"rules", rules_json(rules)},
              {"truth", codec::to_json(truth)},
              {"param_jitter", param_jitter},
              {"covariate_effects", covariate_effects},
              {"tissue_maps", tissue_maps},
              {"steps_per_day", steps_per_day},
              {"tau", tau},
              {"seed_sigma_min", seed_sigma_min},
              {"seed_sigma_max", seed_sigma_max},
              {"pre_growth_days", pre_growth_days},
              {"snap_baseline", snap_baseline}};
    return j.dump();
}

CohortSpec CohortSpec::from_json(const std::string& text) {
    const json j = codec::parse(text);
    if (!j.is_object()) throw ConfigError("cohort spec must be a JSON object");
    CohortSpec s;
    if (const auto it = j.find("kind"); it != j.end()) {
        s.kind = parse_cancer_kind(it->get<std::string>());
        s.rules = default_rules(s.kind);
    }
    take(j, "n_patients", s.n_patients);
    take(j, "width", s.width);
    take(j, "height", s.height);
    take(j, "spacing", s.spacing);
    take(j, "scan_days", s.scan_days);
    take(j, "seed", s.seed);
    if (const auto it = j.find("render"); it != j.end()) {
        take(*it, "bias_field", s.render.bias_field);
        take(*it, "noise_sigma", s.render.noise_sigma);
        take(*it, "lowpass", s.render.lowpass);
        take(*it, "boundary_jitter", s.render.boundary_jitter);
    }
    if (const auto it = j.find("rules"); it != j.end()) {
        auto& r = s.rules;
        const json& q = *it;
        take(q, "surgery", r.surgery);
        take(q, "surgery_min", r.surgery_min);
        take(q, "surgery_max", r.surgery_max);
        take(q, "surgery_extent", r.surgery_extent);
        if (const auto m = q.find("surgery_mode"); m != q.end()) r.surgery_mode = parse_surgery_mode(m->get<std::string>());
        take(q, "surgery_first", r.surgery_first);
        take(q, "rt_fractions", r.rt_fractions);
        take(q, "rt_dose", r.rt_dose);
        take(q, "rt_delay", r.rt_delay);
        take(q, "rt_weekdays_only", r.rt_weekdays_only);
        take(q, "chemo_cycles", r.chemo_cycles);
        take(q, "chemo_cycle_days", r.chemo_cycle_days);
        take(q, "chemo_amplitude", r.chemo_amplitude);
        take(q, "chemo_half_life", r.chemo_half_life);
        take(q, "chemo_with_rt", r.chemo_with_rt);
        take(q, "impulse_train", r.impulse_train);
        take(q, "chemo_kind", r.chemo_kind);
    }
    if (const auto it = j.find("truth"); it != j.end()) s.truth = codec::bio_params_from_json(*it);
    take(j, "param_jitter", s.param_jitter);
    take(j, "covariate_effects", s.covariate_effects);
    take(j, "tissue_maps", s.tissue_maps);
    take(j, "steps_per_day", s.steps_per_day);
    take(j, "tau", s.tau);
    take(j, "seed_sigma_min", s.seed_sigma_min);
    take(j, "seed_sigma_max", s.seed_sigma_max);
    take(j, "pre_growth_days", s.pre_growth_days);
    take(j, "snap_baseline", s.snap_baseline);
    s.validate();
    return s;
}

// --- phantoms ---------------------------------------------------------------

namespace {

struct Ellipse {
    double cx, cy, a, b;

    double level(double x, double y) const {
        const double dx = (x - cx) / a;
        const double dy = (y - cy) / b;
        return dx * dx + dy * dy;
    }
};

// Ellipse whose radius is perturbed by a few low angular harmonics.
struct Lobed {
    Ellipse e;
    double amp[3] = {0, 0, 0};
    double phase[3] = {0, 0, 0};

    bool contains(double x, double y) const {
        const double phi = std::atan2((y - e.cy) / e.b, (x - e.cx) / e.a);
        double r = 1.0;
        for (int m = 0; m < 3; ++m) r += amp[m] * std::cos((m + 2) * phi + phase[m]);
        return e.level(x, y) <= r * r;
    }
};

Lobed lobed(Rng& rng, Ellipse e, double max_amp) {
    Lobed l{e};
    for (int m = 0; m < 3; ++m) {
        l.amp[m] = rng.uniform(0.0, max_amp);
        l.phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return l;
}

}  // namespace

Phantom gen_phantom(CancerKind kind, int width, int height, double spacing, std::uint64_t seed) {
    if (width < 32 || height < 32) throw ValidationError("phantom grid must be at least 32x32", "size");
    Rng rng(seed);
    const double w = width, h = height;
    BinaryMask inside(width, height);
    ScalarField md(width, height, spacing, 1.0), mk(width, height, spacing, 1.0), img(width, height, spacing, 0.05);

    auto paint = [&](auto&& region_of) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double d = 1.0, k = 1.0, v = 0.05;
                if (region_of(px, py, d, k, v)) {
                    inside.set(x, y, true);
                    md(x, y) = d;
                    mk(x, y) = k;
                    img(x, y) = v;
                }
            }
        }
    };

    switch (kind) {
        case CancerKind::AG: {
            const Ellipse head{w / 2 + rng.uniform(-1, 1), h / 2 + rng.uniform(-1, 1),
                               0.42 * w * rng.uniform(0.95, 1.05), 0.38 * h * rng.uniform(0.95, 1.05)};
            const Lobed brain = lobed(rng, head, 0.03);
            const Lobed white =
                lobed(rng, Ellipse{head.cx, head.cy, 0.6 * head.a, 0.55 * head.b}, 0.08);
            paint([&](double x, double y, double& d, double& k, double& v) {
                if (!brain.contains(x, y)) return false;
                const bool wm = white.contains(x, y);
                d = wm ? 1.6 : 0.7;
                k = wm ? 0.9 : 1.1;
                v = wm ? 0.55 : 0.40;
                return true;
            });
            break;
        }
        case CancerKind::HCC: {
            const Lobed right = lobed(rng, Ellipse{0.45 * w, 0.52 * h, 0.30 * w, 0.28 * h}, 0.04);
            const Lobed left = lobed(rng, Ellipse{0.70 * w, 0.38 * h, 0.20 * w, 0.14 * h}, 0.04);
            const Ellipse vessel{rng.uniform(0.35, 0.55) * w, rng.uniform(0.4, 0.6) * h, 0.12 * w, 0.08 * h};
            paint([&](double x, double y, double& d, double& k, double& v) {
                if (!right.contains(x, y) && !left.contains(x, y)) return false;
                const bool vasc = vessel.level(x, y) <= 1.0;
                d = vasc ? 1.2 : 1.0;
                k = vasc ? 1.3 : 1.0;
                v = vasc ? 0.6 : 0.5;
                return true;
            });
            break;
        }
        case CancerKind::NAC: {
            const Ellipse breast{w / 2 + rng.uniform(-1, 1), 0.95 * h, 0.45 * w, 0.75 * h * rng.uniform(0.95, 1.0)};
            const Lobed fgt = lobed(rng, Ellipse{breast.cx, 0.6 * h, 0.25 * w, 0.2 * h}, 0.1);
            paint([&](double x, double y, double& d, double& k, double& v) {
                if (y > breast.cy || breast.level(x, y) > 1.0) return false;
                const bool gland = fgt.contains(x, y);
                d = gland ? 0.8 : 1.2;
                k = gland ? 1.4 : 0.8;
                v = gland ? 0.6 : 0.3;
                return true;
            });
            break;
        }
    }
    return {DomainMask(std::move(inside)), TissueMap{std::move(md), std::move(mk)}, std::move(img)};
}

// --- covariates and timelines ------------------------------------------------

namespace {

struct MarkerRate {
    const char* name;
    double p;
};

// Frequencies per 200 synthetic patients.
constexpr MarkerRate kAgMarkers[] = {
    {"IDH_mutant", 64 / 200.0},     {"MGMT_methylated", 83 / 200.0}, {"EGFR_amplified", 68 / 200.0},
    {"1p19q_codeleted", 22 / 200.0}, {"CDKN2A_deleted", 61 / 200.0},  {"TP53_mutant", 89 / 200.0},
    {"TERT_mutant", 109 / 200.0},    {"ATRX_loss", 19 / 200.0},
};
constexpr MarkerRate kNacMarkers[] = {
    {"ER_positive", 138 / 200.0},
    {"PR_positive", 129 / 200.0},
    {"HER2_positive", 51 / 200.0},
};

int categorical(Rng& rng, std::initializer_list<double> weights) {
    const double u = rng.uniform();
    double acc = 0.0;
    int i = 0;
    for (double wgt : weights) {
        acc += wgt;
        if (u < acc) return i;
        ++i;
    }
    return i - 1;
}

}  // namespace

Covariates sample_covariates(CancerKind kind, std::uint64_t seed) {
    Rng rng(seed);
    Covariates c;
    c.kind = kind;
    c.age_years = rng.uniform(30.0, 80.0);
    switch (kind) {
        case CancerKind::AG:
            c.grade = grade_levels(kind)[static_cast<std::size_t>(rng.integer(0, 2))];
            for (const auto& m : kAgMarkers) c.markers[m.name] = rng.bernoulli(m.p);
            break;
        case CancerKind::NAC:
            c.grade = grade_levels(kind)[static_cast<std::size_t>(rng.integer(0, 2))];
            for (const auto& m : kNacMarkers) c.markers[m.name] = rng.bernoulli(m.p);
            break;
        case CancerKind::HCC: {
            c.grade = 1 + categorical(rng, {111 / 200.0, 77 / 200.0, 12 / 200.0});
            const int bclc = categorical(rng, {97 / 200.0, 74 / 200.0, 29 / 200.0});
            c.markers["BCLC_B"] = bclc == 1;
            c.markers["BCLC_C"] = bclc == 2;
            break;
        }
    }
    return c;
}

namespace {

std::vector<double> rt_days(double start, int fractions, bool weekdays_only) {
    std::vector<double> days;
    for (double d = start; static_cast<int>(days.size()) < fractions; d += 1.0) {
        const int dow = static_cast<int>(d - start) % 7;  // start counts as a Monday
        if (weekdays_only && dow >= 5) continue;
        days.push_back(d);
    }
    return days;
}

ChemoCourse course(double start, double amplitude, double half_life, const std::string& kind) {
    return {start, amplitude, half_life > 0.0 ? std::numbers::ln2 / half_life : 0.0, kind};
}

}  // namespace

TreatmentTimeline sample_timeline(CancerKind kind, const Covariates& covariates, std::uint64_t seed,
                                  const TimelineRules& rules) {
    Rng rng(seed);
    TreatmentTimeline tl;
    const double anchor = std::round(rng.uniform(rules.surgery_min, rules.surgery_max));
    bool do_surgery = rules.surgery;
    if (kind == CancerKind::HCC && (covariates.marker("BCLC_B") || covariates.marker("BCLC_C"))) do_surgery = false;

    auto add_surgery = [&](double day) {
        SurgeryEvent s;
        s.day = day;
        s.mode = rules.surgery_mode;
        s.extent = rules.surgery_extent;
        tl.surgeries.push_back(std::move(s));
    };

    double rt_start = 0.0;
    if (rules.surgery_first) {
        if (do_surgery) add_surgery(anchor);
        rt_start = anchor + rules.rt_delay;
        const double chemo_start = rules.chemo_with_rt ? rt_start : anchor;
        if (rules.impulse_train) {
            const int weeks = std::max(1, (rules.rt_fractions + 4) / 5);
            for (int i = 0; i < weeks; ++i) {
                tl.chemo.push_back(course(chemo_start + 7.0 * i, rules.chemo_amplitude, 1.0, rules.chemo_kind));
            }
        } else {
            for (int i = 0; i < rules.chemo_cycles; ++i) {
                tl.chemo.push_back(course(chemo_start + rules.chemo_cycle_days * i, rules.chemo_amplitude,
                                          rules.chemo_half_life, rules.chemo_kind));
            }
        }
    } else {
        for (int i = 0; i < rules.chemo_cycles; ++i) {
            tl.chemo.push_back(course(anchor + rules.chemo_cycle_days * i, rules.chemo_amplitude,
                                      rules.chemo_half_life, rules.chemo_kind));
        }
        const double surgery_day = anchor + rules.chemo_cycle_days * std::max(rules.chemo_cycles, 1) + 14.0;
        if (do_surgery) add_surgery(surgery_day);
        rt_start = surgery_day + rules.rt_delay;
    }
    for (double d : rt_days(rt_start, rules.rt_fractions, rules.rt_weekdays_only)) tl.rt.push_back({d, rules.rt_dose});
    tl.validate();
    return tl;
}

TreatmentTimeline sample_timeline(CancerKind kind, const Covariates& covariates, std::uint64_t seed) {
    return sample_timeline(kind, covariates, seed, default_rules(kind));
}

BioParams patient_truth(const CohortSpec& spec, const Covariates& c, Rng& rng) {
    BioParams p = spec.truth;
    if (spec.param_jitter > 0.0) {
        p.D *= std::exp(spec.param_jitter * rng.normal());
        p.k *= std::exp(spec.param_jitter * rng.normal());
        p.alpha_ct *= std::exp(spec.param_jitter * rng.normal());
    }
    if (spec.covariate_effects) {
        switch (c.kind) {
            case CancerKind::AG:
                if (c.marker("IDH_mutant")) p.k *= 0.6;
                if (c.marker("MGMT_methylated")) p.alpha_ct *= 1.8;
                if (c.marker("EGFR_amplified")) p.D *= 1.4;
                break;
            case CancerKind::NAC:
                if (c.marker("HER2_positive")) p.k *= 1.3;
                if (c.marker("ER_positive")) p.alpha_ct *= 0.7;
                break;
            case CancerKind::HCC:
                if (c.marker("BCLC_C")) p.D *= 1.4;
                break;
        }
    }
    return p;
}

// --- image corruption ---------------------------------------------------------

ScalarField apply_bias_field(const ScalarField& image, Rng& rng, double strength) {
    double c[5];
    for (double& v : c) v = rng.uniform(-strength, strength);
    ScalarField out = image;
    const int w = image.width(), h = image.height();
    for (int y = 0; y < h; ++y) {
        const double yy = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
        for (int x = 0; x < w; ++x) {
            const double xx = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
            const double b = 1.0 + c[0] * xx + c[1] * yy + c[2] * xx * yy + c[3] * xx * xx + c[4] * yy * yy;
            out(x, y) *= std::max(b, 0.0);
        }
    }
    return out;
}

namespace {
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

ScalarField lowpass_filter(const ScalarField& image, double fraction) {
    if (!(fraction > 0.0)) throw ValidationError("lowpass fraction must be > 0", "lowpass");
    if (fraction >= 1.0) return image;
    const int w = image.width(), h = image.height();
    const int wc = w / 2 + 1;
    std::vector<double> real(image.values().begin(), image.values().end());
    fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(h) * wc);
    fftw_plan fwd, inv;
    {
        std::lock_guard lock(fftw_planner_mutex());
        fwd = fftw_plan_dft_r2c_2d(h, w, real.data(), spec, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_2d(h, w, spec, real.data(), FFTW_ESTIMATE);
    }
    fftw_execute(fwd);
    const double half_w = w / 2.0, half_h = h / 2.0;
    for (int i = 0; i < h; ++i) {
        const double fy = std::min(i, h - i) / half_h;
        for (int j = 0; j < wc; ++j) {
            const double fx = j / half_w;
            if (fx > fraction || fy > fraction) {
                spec[static_cast<std::size_t>(i) * wc + j][0] = 0.0;
                spec[static_cast<std::size_t>(i) * wc + j][1] = 0.0;
            }
        }
    }
    fftw_execute(inv);
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
    }
    fftw_free(spec);
    const double norm = 1.0 / (static_cast<double>(w) * h);
    ScalarField out(w, h, image.spacing(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = real[i] * norm;
    return out;
}

ScalarField rician_noise(const ScalarField& image, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0", "noise_sigma");
    if (sigma == 0.0) return image;
    ScalarField out = image;
    for (double& v : out.values()) {
        const double re = v + sigma * rng.normal();
        const double im = sigma * rng.normal();
        v = std::hypot(re, im);
    }
    return out;
}

BinaryMask jitter_boundary(const BinaryMask& mask, const DomainMask& domain, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("jitter probability must lie in [0,1]", "boundary_jitter");
    BinaryMask out = mask;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!domain.inside(i)) out.bits[i] = 0;
    }
    if (p == 0.0) return out;
    const BinaryMask ref = out;
    const int w = mask.width, h = mask.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!domain.inside(x, y)) continue;
            const bool v = ref(x, y);
            const bool edge = (x > 0 && ref(x - 1, y) != v) || (x + 1 < w && ref(x + 1, y) != v) ||
                              (y > 0 && ref(x, y - 1) != v) || (y + 1 < h && ref(x, y + 1) != v);
            if (edge && rng.bernoulli(p)) out.set(x, y, !v);
        }
    }
    return out;
}

// --- simulation ---------------------------------------------------------------

std::string patient_id(CancerKind kind, int patient_idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%04d", std::string(to_string(kind)).c_str(), patient_idx);
    return buf;
}

namespace {

std::vector<double> protocol_scans(const CohortSpec& spec, const TreatmentTimeline& tl, Rng& rng) {
    if (!spec.scan_days.empty()) return spec.scan_days;
    std::set<double> days{0.0};
    const double last_rt = tl.rt.empty() ? 30.0 : tl.rt.back().day;
    if (spec.rules.surgery_first) {
        if (!tl.surgeries.empty()) {
            days.insert(tl.surgeries.front().day + 2.0);
        } else if (!tl.rt.empty()) {
            days.insert(std::max(1.0, tl.rt.front().day - 1.0));
        }
    } else {
        if (!tl.chemo.empty()) {
            const double mid = tl.chemo[tl.chemo.size() / 2].start_day;
            if (mid > 0.0) days.insert(mid);
        }
        if (!tl.surgeries.empty()) days.insert(tl.surgeries.front().day - 1.0);
    }
    days.insert(last_rt + std::round(rng.uniform(7.0, 21.0)));
    days.insert(last_rt + std::round(rng.uniform(60.0, 90.0)));
    return {days.begin(), days.end()};
}

ScalarField tumour_seed(const DomainMask& domain, double spacing, double theta, Rng& rng, double sigma) {
    const int margin = static_cast<int>(std::ceil(3.0 * sigma)) + 2;
    const BinaryMask core = erode(domain.mask(), margin);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < core.size(); ++i) {
        if (core.at(i)) candidates.push_back(i);
    }
    if (candidates.empty()) {
        for (std::size_t i = 0; i < domain.size(); ++i) {
            if (domain.inside(i)) candidates.push_back(i);
        }
    }
    const std::size_t c = candidates[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(candidates.size()) - 1))];
    const int w = domain.width();
    const int cx = static_cast<int>(c % w), cy = static_cast<int>(c / w);
    ScalarField u(w, domain.height(), spacing, 0.0);
    for (int y = 0; y < domain.height(); ++y) {
        for (int x = 0; x < w; ++x) {
            if (!domain.inside(x, y)) continue;
            const double r2 = static_cast<double>((x - cx) * (x - cx) + (y - cy) * (y - cy));
            u(x, y) = theta * std::exp(-r2 / (2.0 * sigma * sigma));
        }
    }
    return u;
}

ScalarField render_image(const Phantom& ph, const ScalarField& u, double theta, const RenderOptions& opt, Rng& rng) {
    ScalarField img = ph.base_image;
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (ph.domain.inside(i)) img[i] += 0.4 * u[i] / theta;
    }
    if (opt.bias_field) img = apply_bias_field(img, rng);
    img = lowpass_filter(img, opt.lowpass);
    return rician_noise(img, opt.noise_sigma, rng);
}

}  // namespace

SyntheticPatient simulate_and_render(const CohortSpec& spec, int patient_idx) {
    spec.validate();
    if (patient_idx < 0) throw ValidationError("patient index must be >= 0", "patient_idx");
    const std::uint64_t pseed = mix_seed(spec.seed, static_cast<std::uint64_t>(patient_idx));

    SyntheticPatient out;
    PatientRecord& rec = out.record;
    rec.id = patient_id(spec.kind, patient_idx);
    rec.covariates = sample_covariates(spec.kind, mix_seed(pseed, 1));
    const Phantom ph = gen_phantom(spec.kind, spec.width, spec.height, spec.spacing, mix_seed(pseed, 2));
    rec.timeline = sample_timeline(spec.kind, rec.covariates, mix_seed(pseed, 3), spec.rules);
    Rng truth_rng(mix_seed(pseed, 4));
    const BioParams truth = patient_truth(spec, rec.covariates, truth_rng);
    rec.anatomy.domain = ph.domain;
    rec.anatomy.spacing = spec.spacing;
    if (spec.tissue_maps) rec.anatomy.tissue = ph.tissue;

    Rng scan_rng(mix_seed(pseed, 5));
    const std::vector<double> scans = protocol_scans(spec, rec.timeline, scan_rng);
    Rng seed_rng(mix_seed(pseed, 6));
    const double sigma = seed_rng.uniform(spec.seed_sigma_min, spec.seed_sigma_max);
    Rng render_rng(mix_seed(pseed, 7));

    const SpatialModel model(rec.anatomy);
    RolloutConfig cfg;
    cfg.steps_per_day = spec.steps_per_day;
    cfg.threshold_tau = spec.tau;
    TwinState state{tumour_seed(ph.domain, spec.spacing, truth.theta, seed_rng, sigma),
                    scans.front() - spec.pre_growth_days};
    state = step_interval(state, scans.front(), truth, TreatmentTimeline{}, model, cfg);
    if (spec.snap_baseline) {
        const BinaryMask core = threshold(state.field, spec.tau * truth.theta, &ph.domain);
        for (std::size_t i = 0; i < state.field.size(); ++i) state.field[i] = core.at(i) ? truth.theta : 0.0;
    }

    std::set<double> stops(scans.begin(), scans.end());
    for (double d = std::ceil(scans.front()); d <= scans.back(); d += 1.0) stops.insert(d);
    const std::set<double> scan_set(scans.begin(), scans.end());
    GroundTruth gt;
    gt.params = truth;
    const double level = spec.tau * truth.theta;
    for (double day : stops) {
        state = step_interval(state, day, truth, rec.timeline, model, cfg);
        const BinaryMask hard = threshold(state.field, level, &ph.domain);
        if (day == std::floor(day)) gt.volume_curve.emplace_back(day, mask_volume(hard, spec.spacing));
        if (!scan_set.count(day)) continue;
        const std::size_t j = rec.observations.size();
        Observation o;
        o.day = day;
        o.mask = jitter_boundary(hard, ph.domain, spec.render.boundary_jitter, render_rng);
        o.mask_path = "masks/obs_" + std::to_string(j) + ".pgm";
        o.image_path = "images/obs_" + std::to_string(j) + ".socf";
        o.area_mm2 = mask_volume(o.mask, spec.spacing);
        o.recist_mm = max_feret_diameter(o.mask, spec.spacing);
        out.images.push_back(render_image(ph, state.field, truth.theta, spec.render, render_rng));
        out.fields.push_back(state.field);
        rec.observations.push_back(std::move(o));
    }
    rec.truth = std::move(gt);
    rec.validate();
    return out;
}

CohortManifest gen_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir, int threads) {
    spec.validate();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create cohort directory", out_dir.string());

    const auto n = static_cast<std::size_t>(spec.n_patients);
    std::vector<ManifestEntry> entries(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                const SyntheticPatient sp = simulate_and_render(spec, static_cast<int>(i));
                const auto dir = out_dir / sp.record.id;
                std::error_code rm_ec;
                std::filesystem::remove_all(dir, rm_ec);
                write_patient(dir, sp.record);
                for (std::size_t j = 0; j < sp.images.size(); ++j) {
                    write_field(dir / sp.record.observations[j].image_path, sp.images[j],
                                sp.record.observations[j].day);
                }
                ManifestEntry e{sp.record.id, sp.record.id, {}};
                for (const auto& o : sp.record.observations) e.scan_days.push_back(o.day);
                entries[i] = std::move(e);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    if (nt <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    CohortManifest m;
    m.spec_json = spec.to_json();
    m.patients = std::move(entries);
    m.hash = write_manifest(out_dir, m);
    return m;
}

}  // namespace soctwin
