#include "soctwin/imex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "soctwin/error.hpp"

namespace soctwin {

void RolloutConfig::validate() const {
    if (steps_per_day < 1) throw ConfigError("steps_per_day must be >= 1");
    if (!(assimilation_alpha >= 0.0 && assimilation_alpha <= 1.0)) {
        throw ConfigError("assimilation alpha must lie in [0,1]");
    }
    if (!(threshold_tau > 0.0 && threshold_tau < 1.0)) throw ConfigError("threshold tau must lie in (0,1)");
    if (!(obs_density_level >= 0.0 && obs_density_level <= 1.0)) {
        throw ConfigError("obs_density_level must lie in [0,1]");
    }
    if (!(cg.tol > 0.0) || cg.max_iter < 0) throw ConfigError("cg tolerance must be > 0 and max_iter >= 0");
}

SpatialModel::SpatialModel(const DomainMask& domain, double spacing) : laplacian_(domain, spacing) {}

SpatialModel::SpatialModel(const Anatomy& anatomy)
    : laplacian_(anatomy.tissue ? LaplacianOperator(anatomy.domain, anatomy.spacing, anatomy.tissue->diffusion)
                                : LaplacianOperator(anatomy.domain, anatomy.spacing)) {
    if (anatomy.tissue) {
        anatomy.tissue->validate(anatomy.domain);
        proliferation_ = anatomy.tissue->proliferation;
    }
}

void TissueMap::validate(const DomainMask& domain) const {
    for (const ScalarField* f : {&diffusion, &proliferation}) {
        if (!f->same_shape(domain)) throw ShapeError("tissue map and domain differ in shape");
        for (std::size_t i = 0; i < f->size(); ++i) {
            if (domain.inside(i) && !((*f)[i] > 0.0 && std::isfinite((*f)[i]))) {
                throw ValidationError("tissue multipliers must be positive and finite", "tissue");
            }
        }
    }
}

void PatientRecord::validate() const {
    timeline.validate();
    for (std::size_t j = 0; j < observations.size(); ++j) {
        const auto& o = observations[j];
        if (!std::isfinite(o.day)) throw ValidationError("observation day is not finite", "observations");
        if (j > 0 && !(o.day > observations[j - 1].day)) {
            throw ValidationError("observations must be strictly increasing in day", "observations");
        }
        if (o.mask.width != anatomy.width() || o.mask.height != anatomy.height()) {
            throw ShapeError("observation mask and anatomy differ in shape");
        }
    }
    if (anatomy.tissue) anatomy.tissue->validate(anatomy.domain);
}

// ---------------------------------------------------------------------------

ScalarField implicit_diffusion_step(const ScalarField& n, double D, double dt, const LaplacianOperator& L,
                                    const RolloutConfig& cfg, double theta) {
    if (!(D >= 0.0) || !(dt >= 0.0)) throw ValidationError("implicit diffusion needs D, dt >= 0", "D");
    if (D == 0.0 || dt == 0.0) return n;
    ScalarField out = solve_implicit(L, dt * D, n, cfg.cg).x;
    const double floor = -1e-9 * theta;
    for (double& v : out.values()) {
        if (v < 0.0 && v > floor) v = 0.0;
    }
    return out;
}

namespace {

// psi(a) = (1 - exp(-a dt)) / a and its a-derivative.
double riccati_psi(double a, double dt) {
    if (std::abs(a) < 1e-12) return dt;
    return -std::expm1(-a * dt) / a;
}

double riccati_dpsi(double a, double dt) {
    const double z = a * dt;
    if (std::abs(z) < 1e-2) {
        return dt * dt * (-0.5 + z * (1.0 / 3.0 + z * (-1.0 / 8.0 + z * (1.0 / 30.0 - z / 144.0))));
    }
    return (dt * std::exp(-z) * a + std::expm1(-z)) / (a * a);
}

}  // namespace

double riccati_flow(double x, double a, double b, double dt) {
    if (x == 0.0) return 0.0;
    const double e = std::abs(a) < 1e-12 ? 1.0 : std::exp(-a * dt);
    const double h = e + b * x * riccati_psi(a, dt);
    return x / h;
}

RiccatiPartials riccati_partials(double x, double a, double b, double dt) {
    const double e = std::abs(a) < 1e-12 ? 1.0 : std::exp(-a * dt);
    const double psi = riccati_psi(a, dt);
    const double h = e + b * x * psi;
    const double h2 = h * h;
    RiccatiPartials p;
    p.value = x / h;
    p.d_x = e / h2;
    p.d_b = -x * x * psi / h2;
    const double dh_da = -dt * e + b * x * riccati_dpsi(a, dt);
    p.d_a = -x * dh_da / h2;
    return p;
}

namespace {

// Riccati sweep over the domain; optionally records clamp flags into a tape
// entry and tracks the closest approach to theta.
void riccati_apply(ScalarField& u, double k, double theta, double kill, double dt, const ScalarField* prolif,
                   const DomainMask* domain, std::vector<std::uint8_t>* clamped, double* margin) {
    const double tol_hi = theta * (1.0 + 1e-12);
    const bool homogeneous = prolif == nullptr;
    // Homogeneous media share a and b across voxels: hoist the exponentials.
    const double a0 = k - kill;
    const double e0 = std::abs(a0) < 1e-12 ? 1.0 : std::exp(-a0 * dt);
    const double psi0 = riccati_psi(a0, dt);
    const double b0 = k / theta;
    bool any = false;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (domain && !domain->inside(i)) {
            u[i] = 0.0;
            continue;
        }
        const double x = u[i];
        double v;
        if (x == 0.0) {
            v = 0.0;
        } else if (homogeneous) {
            v = x / (e0 + b0 * x * psi0);
        } else {
            const double km = k * (*prolif)[i];
            v = riccati_flow(x, km - kill, km / theta, dt);
        }
        bool clip = false;
        if (!(v <= theta)) {
            clip = !(v <= tol_hi);
            v = theta;
        } else if (v < 0.0) {
            clip = true;
            v = 0.0;
        }
        if (clip) {
            any = true;
            if (clamped) {
                if (clamped->empty()) clamped->assign(u.size(), 0);
                (*clamped)[i] = 1;
            }
        }
        worst = std::min(worst, (theta - v) / theta);
        u[i] = v;
    }
    if (margin) *margin = std::min(*margin, any ? 0.0 : worst);
}

struct EffectiveTimeline {
    TreatmentTimeline tl;
    bool enabled = true;
};

EffectiveTimeline effective_timeline(const TreatmentTimeline& tl, const RolloutConfig& cfg) {
    EffectiveTimeline eff;
    eff.enabled = cfg.treatment_enabled;
    if (!cfg.treatment_enabled) return eff;  // empty timeline: no events, no chemo
    eff.tl = tl;
    if (cfg.kill_mode) eff.tl.kill_mode = *cfg.kill_mode;
    if (cfg.surgery_mode) {
        for (auto& s : eff.tl.surgeries) s.mode = *cfg.surgery_mode;
    }
    return eff;
}

std::vector<double> event_days_in(const TreatmentTimeline& tl, double from, double to) {
    std::set<double> days;
    for (const auto& s : tl.surgeries) {
        if (s.day >= from && s.day < to) days.insert(s.day);
    }
    for (const auto& r : tl.rt) {
        if (r.day >= from && r.day < to) days.insert(r.day);
    }
    return {days.begin(), days.end()};
}

int substep_count(double span, int steps_per_day) {
    const double raw = span * static_cast<double>(steps_per_day);
    return std::max(1, static_cast<int>(std::ceil(raw - 1e-9)));
}

// Shared by the IMEX path and the explicit oracle: every jump at `day`.
void apply_events_at(double day, ScalarField& u, const BioParams& params, const TreatmentTimeline& tl,
                     const SpatialModel& model, const RolloutConfig& cfg, Tape* tape) {
    for (const auto& s : tl.surgeries) {
        if (s.day != day) continue;
        const BinaryMask tumor = threshold(u, cfg.threshold_tau * params.theta, &model.domain());
        ScalarField keep = surgery_multiplier(s, tumor, u.width(), u.height(), u.spacing());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] *= keep[i];
        if (tape) tape->entries.emplace_back(TapeSurgery{std::move(keep)});
    }
    for (const auto& r : tl.rt) {
        if (r.day != day) continue;
        const double s = rt_survival(r.dose, params.alpha_rt, params.beta_rt);
        for (double& v : u.values()) v *= s;
        if (tape) tape->entries.emplace_back(TapeRt{r.dose, s, u});
    }
}

}  // namespace

ScalarField riccati_step(const ScalarField& n, double k, double theta, double kill_rate, double dt,
                         const ScalarField* proliferation) {
    if (!(dt > 0.0)) throw ValidationError("riccati step needs dt > 0", "dt");
    if (!(theta > 0.0)) throw ValidationError("theta must be > 0", "theta");
    if (proliferation && !proliferation->same_shape(n)) throw ShapeError("proliferation map and field differ");
    ScalarField out = n;
    riccati_apply(out, k, theta, kill_rate, dt, proliferation, nullptr, nullptr, nullptr);
    return out;
}

ScalarField assimilate(const ScalarField& u, const BinaryMask& obs, double alpha, double level,
                       const DomainMask* domain) {
    if (!u.same_shape(obs)) throw ShapeError("assimilation: mask and field differ in shape");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("assimilation alpha must lie in [0,1]", "alpha");
    ScalarField out = u;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (domain && !domain->inside(i)) {
            out[i] = 0.0;
            continue;
        }
        const double target = obs.at(i) ? level : 0.0;
        out[i] = alpha * u[i] + (1.0 - alpha) * target;
    }
    return out;
}

TwinState step_interval(const TwinState& state, double to_day, const BioParams& params, const TreatmentTimeline& tl,
                        const SpatialModel& model, const RolloutConfig& cfg, Tape* tape) {
    params.validate();
    cfg.validate();
    tl.validate();
    if (!(to_day >= state.day)) throw ValidationError("step_interval: to_day precedes the current day", "to_day");
    if (!state.field.same_shape(model.domain())) throw ShapeError("state field and anatomy differ in shape");

    const EffectiveTimeline eff = effective_timeline(tl, cfg);
    TwinState out = state;
    ScalarField& u = out.field;
    if (to_day == state.day) return out;

    std::vector<double> stops = event_days_in(eff.tl, state.day, to_day);
    stops.push_back(to_day);

    double t = state.day;
    for (double stop : stops) {
        if (stop > t) {
            const int n = substep_count(stop - t, cfg.steps_per_day);
            const double dt = (stop - t) / n;
            for (int j = 0; j < n; ++j) {
                const double t0 = t + j * dt;
                u = implicit_diffusion_step(u, params.D, dt, model.laplacian(), cfg, params.theta);
                const double gain = eff.enabled ? kill_gain(eff.tl, t0, eff.tl.rt_active(t0)) : 0.0;
                const double kill = params.alpha_ct * gain;
                if (tape) {
                    TapeSubstep rec;
                    rec.t0 = t0;
                    rec.dt = dt;
                    rec.kill_gain = gain;
                    rec.diffused = u;
                    double margin = tape->min_clamp_margin;
                    riccati_apply(u, params.k, params.theta, kill, dt, model.proliferation(), &model.domain(),
                                  &rec.clamped, &margin);
                    tape->min_clamp_margin = margin;
                    tape->any_clamp = tape->any_clamp || !rec.clamped.empty();
                    tape->entries.emplace_back(std::move(rec));
                } else {
                    riccati_apply(u, params.k, params.theta, kill, dt, model.proliferation(), &model.domain(),
                                  nullptr, nullptr);
                }
            }
            t = stop;
        }
        if (stop < to_day) apply_events_at(stop, u, params, eff.tl, model, cfg, tape);
    }
    out.day = to_day;
    return out;
}

TwinState explicit_oracle_rollout(const TwinState& state, double to_day, const BioParams& params,
                                  const TreatmentTimeline& tl, const SpatialModel& model, const RolloutConfig& cfg,
                                  double dt) {
    params.validate();
    cfg.validate();
    tl.validate();
    if (!(dt > 0.0)) throw ConfigError("explicit oracle: dt must be > 0");
    if (params.D > 0.0) {
        // Five-point bound dt <= dx^2 / (4 D m); -diag(L) <= 4 m / dx^2.
        const double h2 = model.spacing() * model.spacing();
        const double max_m = std::max(model.laplacian().max_neg_diagonal() * h2 / 4.0, 1e-300);
        const double bound = 0.9 * h2 / (4.0 * params.D * max_m);
        if (dt > bound) {
            throw ConfigError("explicit oracle: dt " + std::to_string(dt) + " exceeds stability bound " +
                              std::to_string(bound));
        }
    }
    if (!(to_day >= state.day)) throw ValidationError("explicit oracle: to_day precedes the current day", "to_day");

    const EffectiveTimeline eff = effective_timeline(tl, cfg);
    TwinState out = state;
    ScalarField& u = out.field;
    std::vector<double> lu(u.size());
    const ScalarField* prolif = model.proliferation();
    const auto& dom = model.domain();

    std::vector<double> stops = event_days_in(eff.tl, state.day, to_day);
    stops.push_back(to_day);
    double t = state.day;
    for (double stop : stops) {
        if (stop > t) {
            const int n = std::max(1, static_cast<int>(std::ceil((stop - t) / dt - 1e-9)));
            const double h = (stop - t) / n;
            for (int j = 0; j < n; ++j) {
                const double t0 = t + j * h;
                const double kill =
                    eff.enabled ? params.alpha_ct * kill_gain(eff.tl, t0, eff.tl.rt_active(t0)) : 0.0;
                model.laplacian().apply(u.values(), lu);
                for (std::size_t i = 0; i < u.size(); ++i) {
                    if (!dom.inside(i)) continue;
                    const double km = params.k * (prolif ? (*prolif)[i] : 1.0);
                    const double x = u[i];
                    u[i] = x + h * (params.D * lu[i] + km * x * (1.0 - x / params.theta) - kill * x);
                }
            }
            t = stop;
        }
        if (stop < to_day) apply_events_at(stop, u, params, eff.tl, model, cfg, nullptr);
    }
    out.day = to_day;
    return out;
}

ScalarField field_from_mask(const BinaryMask& mask, const Anatomy& anatomy, double level) {
    if (mask.width != anatomy.width() || mask.height != anatomy.height()) {
        throw ShapeError("mask and anatomy differ in shape");
    }
    ScalarField f(anatomy.width(), anatomy.height(), anatomy.spacing, 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (mask.at(i) && anatomy.domain.inside(i)) f[i] = level;
    }
    return f;
}

namespace {

void check_rollout_inputs(const PatientRecord& patient, const BioParams& params, const RolloutConfig& cfg) {
    params.validate();
    cfg.validate();
    patient.validate();
    if (patient.observations.size() < 2) {
        throw ValidationError("rollout needs at least two observations", "observations");
    }
}

}  // namespace

std::vector<RolloutFrame> rollout(const PatientRecord& patient, const BioParams& params, const RolloutConfig& cfg,
                                  Tape* tape) {
    check_rollout_inputs(patient, params, cfg);
    const SpatialModel model(patient.anatomy);
    const auto& obs = patient.observations;
    const double level = cfg.obs_density_level * params.theta;

    if (tape) {
        tape->entries.clear();
        tape->params = params;
        tape->any_clamp = false;
        tape->min_clamp_margin = 1.0;
    }

    std::vector<RolloutFrame> frames;
    TwinState state{field_from_mask(obs.front().mask, patient.anatomy, level), obs.front().day};
    frames.push_back({state.day, state.field, state.field});

    for (std::size_t j = 1; j < obs.size(); ++j) {
        state = step_interval(state, obs[j].day, params, patient.timeline, model, cfg, tape);
        RolloutFrame frame{state.day, state.field, state.field};
        if (tape) tape->entries.emplace_back(TapeObservation{j, state.field});
        if (j + 1 < obs.size()) {
            state.field = assimilate(state.field, obs[j].mask, cfg.assimilation_alpha, level, &model.domain());
            frame.field = state.field;
            if (tape) tape->entries.emplace_back(TapeAssimilation{cfg.assimilation_alpha});
        }
        frames.push_back(std::move(frame));
    }
    return frames;
}

std::vector<TwinState> forecast(const PatientRecord& patient, const BioParams& params, const RolloutConfig& cfg,
                                const ForecastOptions& options) {
    check_rollout_inputs(patient, params, cfg);
    const auto& obs = patient.observations;
    const double start = obs.front().day;
    if (!(options.horizon_day >= start)) {
        throw ValidationError("forecast horizon precedes the first observation", "horizon_day");
    }
    for (double d : options.sample_days) {
        if (!(d >= start && d <= options.horizon_day)) {
            throw ValidationError("sample day outside [first observation, horizon]", "sample_days");
        }
    }
    const SpatialModel model(patient.anatomy);
    const double level = cfg.obs_density_level * params.theta;

    std::set<double> stops(options.sample_days.begin(), options.sample_days.end());
    for (std::size_t j = 1; j + 1 < obs.size(); ++j) {
        if (obs[j].day <= options.horizon_day) stops.insert(obs[j].day);
    }
    stops.insert(options.horizon_day);
    const std::set<double> samples(options.sample_days.begin(), options.sample_days.end());

    TwinState state{field_from_mask(obs.front().mask, patient.anatomy, level), start};
    std::vector<TwinState> out;
    std::size_t next_obs = 1;
    for (double stop : stops) {
        state = step_interval(state, stop, params, patient.timeline, model, cfg);
        while (next_obs < obs.size() && obs[next_obs].day < stop) ++next_obs;
        if (next_obs + 1 < obs.size() && obs[next_obs].day == stop) {
            state.field = assimilate(state.field, obs[next_obs].mask, cfg.assimilation_alpha, level, &model.domain());
            ++next_obs;
        }
        if (samples.count(stop)) out.push_back(state);
    }
    return out;
}

}  // namespace soctwin
