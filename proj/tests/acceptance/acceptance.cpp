// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status is
// the number of failures (capped at 1). Optional argv: names to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>

#include "cli.hpp"
#include "soctwin/calibrate.hpp"
#include "soctwin/imex.hpp"
#include "soctwin/service.hpp"
#include "soctwin/store.hpp"
#include "soctwin/synth.hpp"
#include "soctwin/therapy.hpp"
#include "support.hpp"

using namespace soctwin;
using namespace soctwin::test;
using nlohmann::json;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_seconds;  // 0: no limit
    std::function<Verdict()> run;
};

BioParams random_params(Rng& rng) {
    BioParams p;
    p.D = rng.uniform(0.01, 1.0);
    p.k = rng.uniform(0.01, 0.5);
    p.theta = rng.uniform(0.5, 2.0);
    p.alpha_ct = rng.uniform(0.0, 0.5);
    p.alpha_rt = rng.uniform(0.0, 0.5);
    p.beta_rt = rng.uniform(0.0, 0.1);
    return p;
}

TreatmentTimeline random_timeline(Rng& rng, int w, int h, double spacing, double horizon) {
    TreatmentTimeline tl;
    const int n_surg = static_cast<int>(rng.integer(0, 2));
    for (int i = 0; i < n_surg; ++i) {
        SurgeryEvent& s = tl.surgeries.emplace_back();
        s.day = rng.uniform(0.0, horizon);
        s.mode = static_cast<SurgeryMode>(rng.integer(0, 2));
        s.extent = rng.uniform();
        s.erosion_radius = static_cast<int>(rng.integer(0, 3));
        s.rim_width = static_cast<int>(rng.integer(0, 3));
        if (s.mode == SurgeryMode::Mul && rng.bernoulli(0.5)) s.resection = random_field(w, h, spacing, rng);
    }
    std::sort(tl.surgeries.begin(), tl.surgeries.end(), [](const auto& a, const auto& b) { return a.day < b.day; });
    const double rt0 = rng.uniform(0.0, horizon / 2);
    const int n_rt = static_cast<int>(rng.integer(0, 30));
    for (int i = 0; i < n_rt; ++i) tl.rt.push_back({rt0 + i, rng.uniform(0.5, 3.0)});
    if (rng.bernoulli(0.7)) {
        tl.chemo.push_back({rng.uniform(0.0, horizon), rng.uniform(0.2, 2.0), rng.uniform(0.0, 0.3), "TMZ"});
    }
    tl.kill_mode = static_cast<KillMode>(rng.integer(0, 2));
    tl.synergy_gain = rng.uniform(0.0, 1.0);
    return tl;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double l2(const ScalarField& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * f[i];
    return std::sqrt(s);
}

// --- criteria ----------------------------------------------------------------

Verdict bound_invariance() {
    Rng rng(1001);
    constexpr int n_traj = 50, size = 64, per_day = 50, days = 100;
    double worst_lo = 0.0, worst_hi = 0.0;
    long substeps_min = -1;
    for (int t = 0; t < n_traj; ++t) {
        const DomainMask dom = random_domain(size, size, rng);
        const SpatialModel model(dom, 1.0);
        const BioParams p = random_params(rng);
        const TreatmentTimeline tl = random_timeline(rng, size, size, 1.0, days);
        RolloutConfig cfg;
        cfg.steps_per_day = 1;
        TwinState s{random_field(size, size, 1.0, rng, 0.0, p.theta, &dom), 0.0};
        long count = 0;
        for (int n = 1; n <= days * per_day; ++n) {
            s = step_interval(s, n / static_cast<double>(per_day), p, tl, model, cfg);
            ++count;
            worst_lo = std::min(worst_lo, s.field.min());
            worst_hi = std::max(worst_hi, s.field.max() - p.theta);
        }
        substeps_min = substeps_min < 0 ? count : std::min(substeps_min, count);
    }
    const bool ok = worst_lo >= -1e-9 && worst_hi <= 1e-9 && substeps_min >= 5000;
    return {ok, fmt::format("trajectories={} min_substeps={} min={:.3e} max-theta={:.3e}", n_traj, substeps_min,
                            worst_lo, worst_hi)};
}

Verdict implicit_contraction() {
    Rng rng(1002);
    int violations = 0;
    double worst_ratio = 0.0, worst_min = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int w = static_cast<int>(rng.integer(4, 48)), h = static_cast<int>(rng.integer(4, 48));
        const double dx = rng.uniform(0.25, 2.0), theta = rng.uniform(0.5, 2.0);
        const DomainMask dom = rng.bernoulli(0.5) ? random_domain(w, h, rng) : DomainMask::full(w, h);
        const LaplacianOperator L(dom, dx);
        ScalarField n = random_field(w, h, dx, rng, 0.0, theta, &dom);
        if (rng.bernoulli(0.3)) {
            for (std::size_t i = 0; i < n.size(); ++i) n[i] = rng.bernoulli(0.1) && dom.inside(i) ? theta : 0.0;
        }
        RolloutConfig cfg;
        const ScalarField out = implicit_diffusion_step(n, rng.uniform(0.0, 2.0), rng.uniform(0.01, 2.0), L, cfg, theta);
        const double ratio = l2(out) / std::max(l2(n), 1e-300);
        worst_ratio = std::max(worst_ratio, ratio);
        worst_min = std::min(worst_min, out.min() / theta);
        if (l2(out) > l2(n) || out.min() < -1e-9 * theta) ++violations;
    }
    return {violations == 0,
            fmt::format("fields=1000 violations={} max_norm_ratio={:.15f} min/theta={:.3e}", violations, worst_ratio,
                        worst_min)};
}

Verdict convergence_orders() {
    // Temporal: refinements of the sub-step against a very fine reference.
    const int n = 32;
    const SpatialModel model(DomainMask::full(n, n), 1.0);
    ScalarField u0(n, n, 1.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double r2 = (x - 15.5) * (x - 15.5) + (y - 15.5) * (y - 15.5);
            u0(x, y) = 0.8 * std::exp(-r2 / (2 * 3.0 * 3.0));
        }
    BioParams p;
    p.D = 0.5;
    p.k = 0.1;
    RolloutConfig cfg;
    cfg.cg.tol = 1e-12;
    const double T = 8.0;
    cfg.steps_per_day = 512;
    const ScalarField ref = step_interval(TwinState{u0, 0.0}, T, p, TreatmentTimeline{}, model, cfg).field;
    std::vector<double> lx, ly;
    std::string temporal;
    for (int s : {1, 2, 4, 8}) {
        cfg.steps_per_day = s;
        const double e = linf(step_interval(TwinState{u0, 0.0}, T, p, TreatmentTimeline{}, model, cfg).field, ref);
        lx.push_back(std::log(1.0 / s));
        ly.push_back(std::log(e));
        temporal += fmt::format(" {:.2e}", e);
    }
    const double t_slope = slope(lx, ly);

    // Spatial: the cosine mode on a Neumann strip against the continuous solution.
    const double Lx = 16.0, D = 1.0, Tf = 10.0;
    std::vector<double> sx, sy;
    std::string spatial;
    const int widths[4] = {8, 16, 32, 64};
    const int spd[4] = {1, 4, 16, 64};
    for (int i = 0; i < 4; ++i) {
        const int W = widths[i];
        const double dx = Lx / W;
        const int H = 2;
        const SpatialModel m(DomainMask::full(W, H), dx);
        ScalarField u(W, H, dx), exact(W, H, dx);
        const double decay = std::exp(-D * std::pow(std::numbers::pi / Lx, 2) * Tf);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double c = std::cos(std::numbers::pi * (x + 0.5) * dx / Lx);
                u(x, y) = 0.5 + 0.25 * c;
                exact(x, y) = 0.5 + 0.25 * c * decay;
            }
        BioParams q;
        q.D = D;
        q.k = 0.0;
        RolloutConfig c2;
        c2.cg.tol = 1e-13;
        c2.steps_per_day = spd[i];
        const double e = linf(step_interval(TwinState{u, 0.0}, Tf, q, TreatmentTimeline{}, m, c2).field, exact);
        sx.push_back(std::log(dx));
        sy.push_back(std::log(e));
        spatial += fmt::format(" {:.2e}", e);
    }
    const double s_slope = slope(sx, sy);
    const bool ok = t_slope >= 0.7 && t_slope <= 1.3 && s_slope >= 1.7 && s_slope <= 2.3;
    return {ok, fmt::format("temporal_slope={:.3f} (errors{}) spatial_slope={:.3f} (errors{})", t_slope, temporal,
                            s_slope, spatial)};
}

Verdict riccati_exactness() {
    Rng rng(1004);
    double worst = 0.0;
    for (int rep = 0; rep < 10000; ++rep) {
        const double k = rng.uniform(0.0, 1.0), theta = rng.uniform(0.5, 2.0), kill = rng.uniform(0.0, 1.0);
        const double x = rng.uniform(0.0, theta), dt = rng.uniform(0.01, 2.0);
        const ScalarField in(1, 1, 1.0, x);
        const double got = riccati_step(in, k, theta, kill, dt)[0];
        const double ref = ode_reference(x, k - kill, k / theta, dt);
        const double rel = std::abs(got - ref) / std::max(std::abs(ref), 1e-300);
        if (x > 0.0) worst = std::max(worst, rel);
    }
    return {worst <= 1e-8, fmt::format("tuples=10000 max_rel_err={:.3e}", worst)};
}

Verdict event_maps() {
    Rng rng(1005);
    int violations = 0;
    double worst_lip = 0.0;
    for (int rep = 0; rep < 500; ++rep) {
        const int w = static_cast<int>(rng.integer(6, 32)), h = static_cast<int>(rng.integer(6, 32));
        const double theta = rng.uniform(0.5, 2.0);
        const ScalarField a = random_field(w, h, 1.0, rng, 0.0, theta);
        ScalarField b = random_field(w, h, 1.0, rng, 0.0, theta);
        if (rng.bernoulli(0.5)) {
            b = a;
            for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + rng.normal(0.0, 0.01), 0.0, theta);
        }
        const BinaryMask tumor = threshold(rng.bernoulli(0.5) ? a : b, 0.5 * theta);
        std::vector<std::pair<ScalarField, ScalarField>> outs;
        for (auto mode : {SurgeryMode::Mul, SurgeryMode::MorphOp, SurgeryMode::Rim}) {
            SurgeryEvent ev;
            ev.mode = mode;
            ev.extent = rng.uniform();
            ev.erosion_radius = static_cast<int>(rng.integer(0, 3));
            ev.rim_width = static_cast<int>(rng.integer(0, 3));
            outs.emplace_back(apply_surgery(a, ev, tumor), apply_surgery(b, ev, tumor));
            if (mode == SurgeryMode::Mul) {
                ev.resection = random_field(w, h, 1.0, rng);
                outs.emplace_back(apply_surgery(a, ev, tumor), apply_surgery(b, ev, tumor));
            }
        }
        const RtFraction fr{0.0, rng.uniform(0.0, 5.0)};
        const double ar = rng.uniform(0.0, 0.5), br = rng.uniform(0.0, 0.1);
        outs.emplace_back(apply_rt_fraction(a, fr, ar, br), apply_rt_fraction(b, fr, ar, br));
        const double dab = l2_diff(a, b);
        for (const auto& [ja, jb] : outs) {
            if (ja.min() < 0.0 || jb.min() < 0.0 || ja.max() > theta || jb.max() > theta) ++violations;
            const double lip = dab > 0 ? l2_diff(ja, jb) / dab : 0.0;
            worst_lip = std::max(worst_lip, lip);
            if (l2_diff(ja, jb) > dab) ++violations;
        }
    }
    return {violations == 0, fmt::format("pairs=500 maps=5 violations={} max_lipschitz_ratio={:.6f}", violations,
                                         worst_lip)};
}

Verdict oracle_equivalence() {
    Rng rng(1006);
    const DomainMask dom = random_domain(32, 32, rng);
    const SpatialModel model(dom, 1.0);
    BioParams p;
    p.D = 0.3;
    p.k = 0.1;
    ScalarField u(32, 32, 1.0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double r2 = (x - 16.0) * (x - 16.0) + (y - 15.0) * (y - 15.0);
            u(x, y) = dom.inside(x, y) ? 0.6 * std::exp(-r2 / 18.0) : 0.0;
        }
    RolloutConfig cfg;
    cfg.cg.tol = 1e-12;
    cfg.steps_per_day = 20;
    const double T = 10.0;
    const ScalarField imex = step_interval(TwinState{u, 0.0}, T, p, TreatmentTimeline{}, model, cfg).field;
    const ScalarField ref = explicit_oracle_rollout(TwinState{u, 0.0}, T, p, TreatmentTimeline{}, model, cfg, 1e-3).field;
    const double d = linf(imex, ref);
    return {d <= 1e-3 * p.theta, fmt::format("grid=32x32 days={} steps_per_day=20 linf={:.3e} limit={:.1e}", T, d,
                                             1e-3 * p.theta)};
}

PatientRecord adjoint_fixture(Rng& rng, bool events) {
    const int n = 16;
    const double cx = rng.uniform(6, 10), cy = rng.uniform(6, 10);
    const double r0 = rng.uniform(2.0, 3.5);
    const std::vector<double> days{0.0, rng.uniform(5, 10), rng.uniform(12, 20)};
    PatientRecord p = simple_patient(n, n, days,
                                     {disk(n, n, cx, cy, r0), disk(n, n, cx, cy, r0 + rng.uniform(-1, 1.5)),
                                      disk(n, n, cx, cy, r0 + rng.uniform(-1.5, 1.5))});
    p.covariates.age_years = rng.uniform(30, 80);
    p.covariates.grade = static_cast<int>(rng.integer(2, 4));
    for (const auto& m : marker_slots(CancerKind::AG)) p.covariates.markers[std::string(m)] = rng.bernoulli(0.4);
    if (events) {
        SurgeryEvent& s = p.timeline.surgeries.emplace_back();
        s.day = rng.uniform(1.0, days[1]);
        s.resection = random_field(n, n, 1.0, rng, 0.0, 0.6);
        const double rt0 = rng.uniform(days[1], days[2] - 3);
        for (int i = 0; i < 3; ++i) p.timeline.rt.push_back({rt0 + i, 2.0});
        p.timeline.chemo = {{rt0, rng.uniform(0.5, 1.5), rng.uniform(0.0, 0.2), "TMZ"}};
        p.timeline.kill_mode = static_cast<KillMode>(rng.integer(0, 2));
    }
    return p;
}

Verdict adjoint_correctness() {
    Rng rng(1007);
    double worst = 0.0;
    int fixtures = 0, rejected = 0, with_events = 0;
    while (fixtures < 20 && rejected < 200) {
        const bool events = fixtures % 2 == 1;
        const PatientRecord p = adjoint_fixture(rng, events);
        BioParams b;
        b.D = rng.uniform(0.05, 0.4);
        b.k = rng.uniform(0.02, 0.1);
        b.alpha_ct = rng.uniform(0.02, 0.2);
        b.alpha_rt = rng.uniform(0.02, 0.1);
        b.beta_rt = rng.uniform(0.002, 0.01);
        ModulatorWeights w = ModulatorWeights::zeros();
        auto flat = w.flat();
        for (auto& v : flat) v = rng.normal(0.0, 0.1);
        w.assign_flat(flat);
        RolloutConfig cfg;
        cfg.steps_per_day = 2;
        cfg.cg.tol = 1e-12;
        cfg.assimilation_alpha = rng.uniform(0.3, 1.0);
        cfg.obs_density_level = rng.uniform(0.6, 0.95);
        LossConfig lc;
        lc.all_followups = rng.bernoulli(0.5);
        lc.soft_temp = rng.uniform(0.05, 0.2);
        const AdjointResult ad = grad_adjoint(p, b, w, cfg, lc);
        if (!ad.clamp_free) {
            ++rejected;
            continue;
        }
        const Gradient fd = grad_fd(p, b, w, cfg, lc, 1e-4, true);
        worst = std::max(worst, relative_l2(ad.gradient.flat(), fd.flat()));
        ++fixtures;
        with_events += events;
    }
    return {fixtures == 20 && worst <= 1e-3,
            fmt::format("fixtures={} (with events {}) rejected_clamped={} max_rel_l2={:.3e}", fixtures, with_events,
                        rejected, worst)};
}

Verdict closed_loop_recovery() {
    CohortSpec spec;
    spec.n_patients = 20;
    spec.width = 40;
    spec.height = 40;
    spec.steps_per_day = 1;
    spec.snap_baseline = true;
    spec.seed_sigma_min = 2.0;
    spec.seed_sigma_max = 3.0;
    spec.pre_growth_days = 30.0;
    spec.rules.surgery_extent = 0.4;
    std::vector<PatientRecord> cohort;
    for (int i = 0; i < spec.n_patients; ++i) cohort.push_back(simulate_and_render(spec, i).record);

    const Fold fold = kfold_split(cohort.size(), 5, spec.seed).front();
    std::vector<PatientRecord> train, val;
    for (auto i : fold.train) train.push_back(cohort[i]);
    for (auto i : fold.val) val.push_back(cohort[i]);

    RolloutConfig cfg;
    cfg.steps_per_day = 1;
    cfg.assimilation_alpha = 1.0;
    LossConfig lc;
    lc.soft_temp = 0.01;
    lc.all_followups = true;
    OptimConfig oc;
    oc.max_iters = 150;
    oc.train_weights = false;
    oc.train_params = {true, true, true, false, false};
    oc.seed = spec.seed;
    ModelState init;
    init.params = spec.truth;
    init.params.D = 0.15;
    init.params.k = 0.035;
    init.params.alpha_ct = 0.15;
    const FitResult full = fit(train, init, oc, lc, cfg);

    RolloutConfig ablation_cfg = cfg;
    ablation_cfg.treatment_enabled = false;
    OptimConfig ablation_oc = oc;
    ablation_oc.train_params = {true, true, false, false, false};
    const FitResult ablation = fit(train, init, ablation_oc, lc, ablation_cfg);

    double dsc_full = 0.0, dsc_ablation = 0.0;
    for (const auto& p : val) {
        dsc_full += cli::evaluate_patient(p, full.params, full.weights, cfg).dsc;
        dsc_ablation += cli::evaluate_patient(p, ablation.params, ablation.weights, ablation_cfg).dsc;
    }
    dsc_full /= static_cast<double>(val.size());
    dsc_ablation /= static_cast<double>(val.size());

    const double eD = full.params.D / spec.truth.D - 1.0;
    const double ek = full.params.k / spec.truth.k - 1.0;
    const double ea = full.params.alpha_ct / spec.truth.alpha_ct - 1.0;
    const bool ok = std::abs(eD) <= 0.2 && std::abs(ek) <= 0.2 && std::abs(ea) <= 0.2 && dsc_full >= dsc_ablation;
    return {ok, fmt::format("train={} val={} D_err={:+.1f}% k_err={:+.1f}% alpha_ct_err={:+.1f}% "
                            "val_dsc={:.4f} ablation_val_dsc={:.4f}",
                            train.size(), val.size(), 100 * eD, 100 * ek, 100 * ea, dsc_full, dsc_ablation)};
}

Verdict nudging_bound() {
    Rng rng(1009);
    int violations = 0;
    for (int rep = 0; rep < 5000; ++rep) {
        const int w = static_cast<int>(rng.integer(2, 24)), h = static_cast<int>(rng.integer(2, 24));
        const double theta = rng.uniform(0.5, 2.0);
        const DomainMask dom = rng.bernoulli(0.5) ? random_domain(w, h, rng) : DomainMask::full(w, h);
        const ScalarField u = random_field(w, h, 1.0, rng, 0.0, theta, &dom);
        const BinaryMask m = random_mask(w, h, rng, rng.uniform());
        const double alpha = rep % 7 == 0 ? static_cast<double>(rep % 2) : rng.uniform();
        const ScalarField out = assimilate(u, m, alpha, rng.uniform(0.0, theta), &dom);
        if (out.min() < 0.0 || out.max() > theta) ++violations;
    }
    return {violations == 0, fmt::format("blends=5000 violations={}", violations)};
}

Verdict determinism() {
    TempDir dir("accept");
    std::ostringstream o1, o2, e;
    const std::vector<std::string> gen1{"gen", "--out", (dir / "a").string(), "--n", "6", "--size", "32", "--seed", "3"};
    const std::vector<std::string> gen2{"gen", "--out", (dir / "b").string(), "--n", "6", "--size", "32", "--seed", "3"};
    const int g1 = cli::run(gen1, o1, e), g2 = cli::run(gen2, o2, e);
    const std::string h1 = read_manifest(dir / "a").hash, h2 = read_manifest(dir / "b").hash;
    const auto cal = [&](const std::string& out) {
        std::ostringstream so, se;
        return cli::run({"calibrate", "--cohort", (dir / "a").string(), "--out", (dir / out).string(), "--k-folds", "3",
                         "--iters", "10", "--threads", "1", "--seed", "5", "--steps-per-day", "1"},
                        so, se);
    };
    const int c1 = cal("c1"), c2 = cal("c2");
    bool same = true;
    for (int f = 0; f < 3; ++f) {
        const std::string rel = "fold_" + std::to_string(f) + "/checkpoint.json";
        same = same && read_bytes(dir / "c1" / rel) == read_bytes(dir / "c2" / rel);
    }
    const bool ok = g1 == 0 && g2 == 0 && c1 == 0 && c2 == 0 && h1 == h2 && o1.str() == o2.str() && same;
    return {ok, fmt::format("manifest_hash={} hashes_equal={} checkpoints_identical={}", h1.substr(0, 16),
                            h1 == h2, same)};
}

Verdict cohort_statistics() {
    TempDir dir("accept");
    CohortSpec spec;
    spec.n_patients = 200;
    spec.width = 32;
    spec.height = 32;
    spec.steps_per_day = 1;
    gen_cohort(spec, dir.path());
    const Cohort c = load_cohort(dir.path(), true);
    const std::map<std::string, int> table{{"IDH_mutant", 64},     {"MGMT_methylated", 83}, {"EGFR_amplified", 68},
                                           {"1p19q_codeleted", 22}, {"CDKN2A_deleted", 61}, {"TP53_mutant", 89},
                                           {"TERT_mutant", 109},    {"ATRX_loss", 19}};
    bool ok = c.patients.size() == 200;
    std::string detail;
    for (const auto& [name, expected] : table) {
        int count = 0;
        for (const auto& p : c.patients) count += p.covariates.marker(name) ? 1 : 0;
        const double pr = expected / 200.0;
        const double sd = std::sqrt(200.0 * pr * (1.0 - pr));
        const bool within = std::abs(count - expected) <= 3.0 * sd;
        ok = ok && within;
        detail += fmt::format(" {}={}/{}", name, count, expected);
    }
    return {ok, "n=" + std::to_string(c.patients.size()) + detail};
}

Verdict service_contract() {
    TempDir dir("accept");
    CohortSpec spec;
    spec.n_patients = 10;
    spec.width = 32;
    spec.height = 32;
    spec.seed = 2024;
    gen_cohort(spec, dir.path());
    ServiceOptions opt;
    opt.async_threshold_seconds = 1e9;
    TwinService svc(load_cohort(dir.path(), true), Checkpoint{}, opt);
    int equal = 0, monotone = 0;
    for (const auto& p : svc.cohort().patients) {
        const json base = {{"patient_id", p.id}, {"horizon_day", 200.0}, {"mask_days", {200.0}}};
        json empty = base;
        empty["edits"] = json::array();
        json no_rt = base;
        no_rt["edits"] = {{{"op", "remove_all"}, {"kind", "rt"}}};
        const HttpResponse sim = svc.handle("POST", "/simulate", base.dump());
        const HttpResponse wi = svc.handle("POST", "/whatif", empty.dump());
        const HttpResponse cut = svc.handle("POST", "/whatif", no_rt.dump());
        if (sim.status == 200 && sim.body == wi.body) ++equal;
        if (sim.status == 200 && cut.status == 200) {
            const double v0 = json::parse(sim.body).at("volume_curve").back().at(1).get<double>();
            const double v1 = json::parse(cut.body).at("volume_curve").back().at(1).get<double>();
            if (v1 >= v0) ++monotone;
        }
    }
    const int n = static_cast<int>(svc.cohort().patients.size());
    return {equal == n && monotone == n && n == 10,
            fmt::format("patients={} byte_equal={} rt_removal_non_decreasing={}", n, equal, monotone)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {"bound_invariance", 120, bound_invariance},
        {"implicit_contraction", 30, implicit_contraction},
        {"convergence_orders", 120, convergence_orders},
        {"riccati_exactness", 30, riccati_exactness},
        {"event_maps", 30, event_maps},
        {"oracle_equivalence", 60, oracle_equivalence},
        {"adjoint_correctness", 180, adjoint_correctness},
        {"closed_loop_recovery", 900, closed_loop_recovery},
        {"nudging_bound", 10, nudging_bound},
        {"determinism", 0, determinism},
        {"cohort_statistics", 0, cohort_statistics},
        {"service_contract", 0, service_contract},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_seconds <= 0 || secs < c.budget_seconds;
        const bool pass = v.pass && in_time;
        failures += pass ? 0 : 1;
        const std::string budget = c.budget_seconds > 0 ? fmt::format("/{:.0f}s", c.budget_seconds) : "";
        std::printf("%s %s [%.1fs%s] %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs, budget.c_str(),
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
