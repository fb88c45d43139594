#include "soctwin/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "soctwin/error.hpp"
#include "soctwin/rng.hpp"

namespace soctwin {

void LossConfig::validate() const {
    if (!(dice_weight >= 0.0) || !(bce_weight >= 0.0) || !(dice_weight + bce_weight > 0.0)) {
        throw ConfigError("loss weights must be >= 0 with a positive sum");
    }
    if (!(soft_temp > 0.0)) throw ConfigError("soft_temp must be > 0");
    if (!(eps >= 0.0)) throw ConfigError("dice eps must be >= 0");
}

void OptimConfig::validate() const {
    if (!(lr_params > 0.0) || !(lr_weights > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(weight_init_scale >= 0.0)) throw ConfigError("weight_init_scale must be >= 0");
}

std::vector<double> Gradient::flat() const {
    std::vector<double> out(params.begin(), params.end());
    out.insert(out.end(), weights.begin(), weights.end());
    return out;
}

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

constexpr double kProbLo = 1e-7;
constexpr double kProbHi = 1.0 - 1e-7;

double& param_ref(BioParams& p, int i) {
    switch (i) {
        case 0: return p.D;
        case 1: return p.k;
        case 2: return p.alpha_ct;
        case 3: return p.alpha_rt;
        default: return p.beta_rt;
    }
}

double param_get(const BioParams& p, int i) { return param_ref(const_cast<BioParams&>(p), i); }

std::vector<std::size_t> target_indices(const PatientRecord& patient, const LossConfig& lc) {
    const std::size_t n = patient.observations.size();
    if (n < 2) throw ValidationError("calibration needs at least two observations", "observations");
    if (!lc.all_followups) return {n - 1};
    std::vector<std::size_t> out;
    for (std::size_t j = 1; j < n; ++j) out.push_back(j);
    return out;
}

}  // namespace

ScalarField soft_mask(const ScalarField& n, double tau, double theta, double soft_temp) {
    if (!(soft_temp > 0.0)) throw ValidationError("soft_temp must be > 0", "soft_temp");
    ScalarField p = n;
    const double level = tau * theta;
    for (double& v : p.values()) v = sigmoid((v - level) / soft_temp);
    return p;
}

LossGradient loss_with_gradient(const ScalarField& pred, const BinaryMask& obs, const LossConfig& lc, double tau,
                                double theta) {
    lc.validate();
    if (!pred.same_shape(obs)) throw ShapeError("loss: prediction and mask differ in shape");
    const ScalarField p = soft_mask(pred, tau, theta, lc.soft_temp);
    const std::size_t n = p.size();

    double sp = 0.0, sm = 0.0, spm = 0.0, bce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = obs.at(i) ? 1.0 : 0.0;
        sp += p[i];
        sm += m;
        spm += p[i] * m;
        const double pc = std::clamp(p[i], kProbLo, kProbHi);
        bce -= m * std::log(pc) + (1.0 - m) * std::log(1.0 - pc);
    }
    const double num = 2.0 * spm + lc.eps;
    const double den = sp + sm + lc.eps;
    const double dice = num / den;
    const double nn = static_cast<double>(n);

    LossGradient out;
    out.value = lc.dice_weight * (1.0 - dice) + lc.bce_weight * bce / nn;
    out.d_pred = ScalarField(pred.width(), pred.height(), pred.spacing(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = obs.at(i) ? 1.0 : 0.0;
        const double dp_du = p[i] * (1.0 - p[i]) / lc.soft_temp;
        const double d_dice = (2.0 * m * den - num) / (den * den);
        double d = -lc.dice_weight * d_dice * dp_du;
        // d/du of -m log p - (1-m) log(1-p) is (p - m) / T inside the clamp.
        if (p[i] > kProbLo && p[i] < kProbHi) d += lc.bce_weight * (p[i] - m) / (lc.soft_temp * nn);
        out.d_pred[i] = d;
    }
    return out;
}

double loss(const ScalarField& pred, const BinaryMask& obs, const LossConfig& lc, double tau, double theta) {
    lc.validate();
    if (!pred.same_shape(obs)) throw ShapeError("loss: prediction and mask differ in shape");
    const ScalarField p = soft_mask(pred, tau, theta, lc.soft_temp);
    double sp = 0.0, sm = 0.0, spm = 0.0, bce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = obs.at(i) ? 1.0 : 0.0;
        sp += p[i];
        sm += m;
        spm += p[i] * m;
        const double pc = std::clamp(p[i], kProbLo, kProbHi);
        bce -= m * std::log(pc) + (1.0 - m) * std::log(1.0 - pc);
    }
    const double dice = (2.0 * spm + lc.eps) / (sp + sm + lc.eps);
    return lc.dice_weight * (1.0 - dice) + lc.bce_weight * bce / static_cast<double>(p.size());
}

double patient_loss(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                    const RolloutConfig& cfg, const LossConfig& lc) {
    lc.validate();
    const auto targets = target_indices(patient, lc);
    const BioParams eff = modulate(patient.covariates, weights, params);
    const auto frames = rollout(patient, eff, cfg);
    double total = 0.0;
    for (std::size_t j : targets) {
        total += loss(frames[j].prediction, patient.observations[j].mask, lc, cfg.threshold_tau, eff.theta);
    }
    return total / static_cast<double>(targets.size());
}

AdjointResult adjoint_sweep(const PatientRecord& patient, const Tape& tape, const BioParams& params,
                            const ModulatorWeights& weights, const RolloutConfig& cfg, const LossConfig& lc) {
    if (tape.entries.empty()) throw StateError("adjoint sweep: no recorded trajectory");
    lc.validate();
    const auto targets = target_indices(patient, lc);
    const std::vector<double> features = patient.covariates.features();
    const BioParams& eff = tape.params;
    const SpatialModel model(patient.anatomy);
    const DomainMask& dom = model.domain();
    const ScalarField* prolif = model.proliferation();
    const double weight = 1.0 / static_cast<double>(targets.size());
    const double theta = eff.theta;

    AdjointResult res;
    res.clamp_free = !tape.any_clamp;
    res.min_clamp_margin = tape.min_clamp_margin;

    ScalarField lambda(patient.anatomy.width(), patient.anatomy.height(), patient.anatomy.spacing, 0.0);
    ScalarField lx = lambda;
    std::vector<double> lu(lambda.size());
    double gD = 0.0, gk = 0.0, gct = 0.0, grt = 0.0, gbeta = 0.0;

    for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
        if (const auto* obs = std::get_if<TapeObservation>(&*it)) {
            if (std::find(targets.begin(), targets.end(), obs->index) == targets.end()) continue;
            const LossGradient lg = loss_with_gradient(obs->prediction, patient.observations[obs->index].mask, lc,
                                                       cfg.threshold_tau, theta);
            res.loss += weight * lg.value;
            for (std::size_t i = 0; i < lambda.size(); ++i) {
                if (dom.inside(i)) lambda[i] += weight * lg.d_pred[i];
            }
        } else if (const auto* as = std::get_if<TapeAssimilation>(&*it)) {
            for (double& v : lambda.values()) v *= as->alpha;
        } else if (const auto* rt = std::get_if<TapeRt>(&*it)) {
            const double inner = dot(lambda.values(), rt->post.values());
            grt += -rt->dose * inner;
            gbeta += -rt->dose * rt->dose * inner;
            for (double& v : lambda.values()) v *= rt->survival;
        } else if (const auto* sg = std::get_if<TapeSurgery>(&*it)) {
            for (std::size_t i = 0; i < lambda.size(); ++i) lambda[i] *= sg->multiplier[i];
        } else {
            const auto& st = std::get<TapeSubstep>(*it);
            const double kill_da = -st.kill_gain;  // da/d(alpha_ct)
            for (std::size_t i = 0; i < lambda.size(); ++i) {
                if (!dom.inside(i)) {
                    lx[i] = 0.0;
                    continue;
                }
                const double x = st.diffused[i];
                const double m = prolif ? (*prolif)[i] : 1.0;
                const double km = eff.k * m;
                const double a = km - eff.alpha_ct * st.kill_gain;
                const double b = km / theta;
                const bool clamped = !st.clamped.empty() && st.clamped[i];
                if (clamped || x == 0.0) {
                    // Zero input stays zero for every parameter; slope in x is exp(a dt).
                    lx[i] = clamped ? 0.0 : lambda[i] * std::exp(a * st.dt);
                    continue;
                }
                const RiccatiPartials pr = riccati_partials(x, a, b, st.dt);
                lx[i] = lambda[i] * pr.d_x;
                gk += lambda[i] * (pr.d_a * m + pr.d_b * m / theta);
                gct += lambda[i] * pr.d_a * kill_da;
            }
            if (eff.D > 0.0) {
                lambda = solve_implicit(model.laplacian(), st.dt * eff.D, lx, cfg.cg).x;
            } else {
                lambda = lx;
            }
            model.laplacian().apply(st.diffused.values(), lu);
            gD += st.dt * dot(lambda.values(), lu);
        }
    }

    // Chain the effective (modulated) parameters back to the global ones.
    const Modulation mod = modulator_output(features, weights);
    res.gradient.params = {gD * mod.multiplier[0], gk * mod.multiplier[1], gct * mod.multiplier[2], grt, gbeta};
    const ModulatorJacobian jac = modulator_jacobian(features, weights, params);
    res.gradient.weights.assign(jac.cols, 0.0);
    const double g3[3] = {gD, gk, gct};
    for (int r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < jac.cols; ++c) res.gradient.weights[c] += g3[r] * jac.rows[r][c];
    }
    return res;
}

AdjointResult grad_adjoint(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                           const RolloutConfig& cfg, const LossConfig& lc) {
    lc.validate();
    const BioParams eff = modulate(patient.covariates, weights, params);
    Tape tape;
    rollout(patient, eff, cfg, &tape);
    return adjoint_sweep(patient, tape, params, weights, cfg, lc);
}

Gradient grad_fd(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                 const RolloutConfig& cfg, const LossConfig& lc, double h, bool include_weights) {
    if (!(h > 0.0)) throw ValidationError("finite-difference step must be > 0", "h");
    auto eval = [&](const BioParams& p, const ModulatorWeights& w) {
        const double v = patient_loss(patient, p, w, cfg, lc);
        if (!std::isfinite(v)) throw DivergenceError("finite differences: non-finite loss", 0);
        return v;
    };
    Gradient g;
    const double base = eval(params, weights);
    for (int i = 0; i < 5; ++i) {
        const double p0 = param_get(params, i);
        const double step = p0 != 0.0 ? h * std::abs(p0) : h;
        BioParams hi = params;
        param_ref(hi, i) = p0 + step;
        if (p0 - step < 0.0) {
            g.params[i] = (eval(hi, weights) - base) / step;
            continue;
        }
        BioParams lo = params;
        param_ref(lo, i) = p0 - step;
        g.params[i] = (eval(hi, weights) - eval(lo, weights)) / (2.0 * step);
    }
    if (include_weights) {
        const std::vector<double> w0 = weights.flat();
        g.weights.assign(w0.size(), 0.0);
        ModulatorWeights w = weights;
        std::vector<double> buf = w0;
        for (std::size_t c = 0; c < w0.size(); ++c) {
            const double step = h * std::max(std::abs(w0[c]), 1.0);
            buf[c] = w0[c] + step;
            w.assign_flat(buf);
            const double up = eval(params, w);
            buf[c] = w0[c] - step;
            w.assign_flat(buf);
            const double down = eval(params, w);
            buf[c] = w0[c];
            g.weights[c] = (up - down) / (2.0 * step);
        }
    }
    return g;
}

double relative_l2(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw ShapeError("relative_l2: length mismatch");
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

namespace {

struct CohortEval {
    double loss = 0.0;
    Gradient gradient;
};

// Mean loss and gradient; per-patient work is spread over threads and
// reduced in patient order.
CohortEval evaluate_cohort(std::span<const PatientRecord> cohort, const BioParams& params,
                           const ModulatorWeights& weights, const RolloutConfig& cfg, const LossConfig& lc,
                           int threads) {
    std::vector<AdjointResult> per(cohort.size());
    std::vector<std::exception_ptr> errors(cohort.size());
    auto work = [&](std::size_t i) {
        try {
            per[i] = grad_adjoint(cohort[i], params, weights, cfg, lc);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), cohort.size());
    if (nt <= 1) {
        for (std::size_t i = 0; i < cohort.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < cohort.size(); i += nt) work(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    CohortEval out;
    out.gradient.weights.assign(weights.parameter_count(), 0.0);
    const double inv = 1.0 / static_cast<double>(cohort.size());
    for (const auto& r : per) {
        out.loss += inv * r.loss;
        for (int i = 0; i < 5; ++i) out.gradient.params[i] += inv * r.gradient.params[i];
        for (std::size_t c = 0; c < out.gradient.weights.size(); ++c) {
            out.gradient.weights[c] += inv * r.gradient.weights[c];
        }
    }
    return out;
}

}  // namespace

FitResult fit(std::span<const PatientRecord> cohort, const ModelState& init, const OptimConfig& oc,
              const LossConfig& lc, const RolloutConfig& cfg) {
    oc.validate();
    lc.validate();
    cfg.validate();
    init.params.validate();
    init.weights.validate();
    if (cohort.empty()) throw ValidationError("fit: empty cohort", "cohort");
    for (const auto& p : cohort) {
        p.validate();
        if (p.observations.size() < 2) throw ValidationError("fit: patient " + p.id + " lacks a target", "cohort");
    }
    for (int i = 0; i < 5; ++i) {
        if (oc.train_params[i] && !(param_get(init.params, i) > 0.0)) {
            throw ValidationError("fit: trained parameters must start strictly positive", "init");
        }
    }

    ModelState cur = init;
    if (oc.weight_init_scale > 0.0) {
        Rng rng(oc.seed);
        std::vector<double> w = cur.weights.flat();
        for (double& v : w) v += oc.weight_init_scale * rng.normal();
        cur.weights.assign_flat(w);
    }

    const std::size_t nw = oc.train_weights ? cur.weights.parameter_count() : 0;
    const std::size_t dim = 5 + nw;
    std::vector<double> x(dim), m(dim, 0.0), v(dim, 0.0), lr(dim, oc.lr_weights);
    for (int i = 0; i < 5; ++i) {
        x[i] = oc.train_params[i] ? std::log(param_get(cur.params, i)) : 0.0;
        lr[i] = oc.lr_params;
    }
    {
        const std::vector<double> w = cur.weights.flat();
        for (std::size_t c = 0; c < nw; ++c) x[5 + c] = w[c];
    }

    FitResult result;
    if (oc.grad_check) {
        const Gradient ga = grad_adjoint(cohort.front(), cur.params, cur.weights, cfg, lc).gradient;
        const Gradient gf = grad_fd(cohort.front(), cur.params, cur.weights, cfg, lc, 1e-4, oc.train_weights);
        const std::vector<double> fa = oc.train_weights ? ga.flat()
                                                       : std::vector<double>(ga.params.begin(), ga.params.end());
        result.grad_check_report = relative_l2(fa, gf.flat());
    }

    double best = std::numeric_limits<double>::infinity();
    ModelState best_state = cur;
    double b1t = 1.0, b2t = 1.0;
    for (int it = 0;; ++it) {
        const CohortEval ev = evaluate_cohort(cohort, cur.params, cur.weights, cfg, lc, oc.threads);
        if (!std::isfinite(ev.loss)) {
            throw DivergenceError("fit diverged: non-finite loss at iteration " + std::to_string(it), it);
        }
        result.loss_history.push_back(ev.loss);
        if (ev.loss < best) {
            best = ev.loss;
            best_state = cur;
            result.best_iteration = it;
        }
        if (it == oc.max_iters) break;

        std::vector<double> g(dim);
        for (int i = 0; i < 5; ++i) {
            g[i] = oc.train_params[i] ? ev.gradient.params[i] * param_get(cur.params, i) : 0.0;
        }
        for (std::size_t c = 0; c < nw; ++c) g[5 + c] = ev.gradient.weights[c];
        double gn = 0.0;
        for (double gi : g) gn += gi * gi;
        gn = std::sqrt(gn);
        if (!std::isfinite(gn)) {
            throw DivergenceError("fit diverged: non-finite gradient at iteration " + std::to_string(it), it);
        }
        if (gn > oc.clip_norm) {
            const double s = oc.clip_norm / gn;
            for (double& gi : g) gi *= s;
        }

        b1t *= oc.beta1;
        b2t *= oc.beta2;
        for (std::size_t d = 0; d < dim; ++d) {
            m[d] = oc.beta1 * m[d] + (1.0 - oc.beta1) * g[d];
            v[d] = oc.beta2 * v[d] + (1.0 - oc.beta2) * g[d] * g[d];
            const double mh = m[d] / (1.0 - b1t);
            const double vh = v[d] / (1.0 - b2t);
            x[d] -= lr[d] * mh / (std::sqrt(vh) + oc.adam_eps);
        }
        for (int i = 0; i < 5; ++i) {
            if (oc.train_params[i]) param_ref(cur.params, i) = std::exp(x[i]);
        }
        if (nw > 0) {
            std::vector<double> w(x.begin() + 5, x.end());
            cur.weights.assign_flat(w);
        }
    }
    result.params = best_state.params;
    result.weights = best_state.weights;
    return result;
}

std::vector<Fold> kfold_split(std::size_t cohort_size, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("kfold: K must be >= 2", "k");
    if (static_cast<std::size_t>(k) > cohort_size) throw ValidationError("kfold: K exceeds cohort size", "k");
    std::vector<std::size_t> order(cohort_size);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = cohort_size; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<Fold> folds(static_cast<std::size_t>(k));
    for (std::size_t pos = 0; pos < cohort_size; ++pos) {
        const std::size_t f = pos % static_cast<std::size_t>(k);
        for (std::size_t g = 0; g < folds.size(); ++g) {
            (g == f ? folds[g].val : folds[g].train).push_back(order[pos]);
        }
    }
    for (auto& f : folds) {
        std::sort(f.train.begin(), f.train.end());
        std::sort(f.val.begin(), f.val.end());
    }
    return folds;
}

}  // namespace soctwin
