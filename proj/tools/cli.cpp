#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include "soctwin/metrics.hpp"
#include "soctwin/rng.hpp"
#include "soctwin/service.hpp"
#include "soctwin/store.hpp"
#include "soctwin/synth.hpp"

namespace soctwin::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Shape: return kShape;
        case ErrorKind::Validation: return kValidation;
        case ErrorKind::Config: return kConfig;
        case ErrorKind::Solver: return kSolver;
        case ErrorKind::Format: return kFormat;
        case ErrorKind::Io: return kIo;
        case ErrorKind::State: return kState;
        case ErrorKind::Divergence: return kDivergence;
    }
    return kInternal;
}

namespace {

std::shared_ptr<spdlog::logger> logger() {
    static const std::shared_ptr<spdlog::logger> log = [] {
        auto l = spdlog::stderr_logger_mt("soctwin");
        const char* env = std::getenv("SOCTWIN_LOG");
        l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
        l->set_pattern("[%H:%M:%S.%e] [%l] %v");
        return l;
    }();
    return log;
}

std::string num(double v) { return fmt::format("{}", v); }

// Options shared by every subcommand that runs the twin.
struct RolloutFlags {
    std::optional<int> steps_per_day;
    std::optional<double> alpha;
    std::optional<double> tau;
    std::optional<std::string> kill_mode;
    std::optional<std::string> surgery_mode;

    void add(CLI::App& app) {
        app.add_option("--steps-per-day", steps_per_day, "IMEX sub-steps per calendar day");
        app.add_option("--alpha", alpha, "assimilation blend weight in [0,1]");
        app.add_option("--tau", tau, "mask threshold as a fraction of theta");
        app.add_option("--kill-mode", kill_mode, "Additive | Saturation | Synergy");
        app.add_option("--surgery-mode", surgery_mode, "Mul | MorphOp | Rim");
    }

    RolloutConfig resolve() const {
        RolloutConfig cfg;
        if (steps_per_day) cfg.steps_per_day = *steps_per_day;
        if (alpha) cfg.assimilation_alpha = *alpha;
        if (tau) cfg.threshold_tau = *tau;
        if (kill_mode) cfg.kill_mode = parse_kill_mode(*kill_mode);
        if (surgery_mode) cfg.surgery_mode = parse_surgery_mode(*surgery_mode);
        cfg.validate();
        return cfg;
    }
};

struct ParamFlags {
    std::optional<double> D, k, alpha_ct, alpha_rt, beta_rt;

    void add(CLI::App& app) {
        app.add_option("--D", D, "global diffusion (mm^2/day)");
        app.add_option("--k", k, "global proliferation (1/day)");
        app.add_option("--alpha-ct", alpha_ct, "chemotherapy kill coefficient");
        app.add_option("--alpha-rt", alpha_rt, "radiosensitivity alpha (1/Gy)");
        app.add_option("--beta-rt", beta_rt, "radiosensitivity beta (1/Gy^2)");
    }

    void apply(BioParams& p) const {
        if (D) p.D = *D;
        if (k) p.k = *k;
        if (alpha_ct) p.alpha_ct = *alpha_ct;
        if (alpha_rt) p.alpha_rt = *alpha_rt;
        if (beta_rt) p.beta_rt = *beta_rt;
        p.validate();
    }
};

std::vector<double> parse_days(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("bad day list entry '" + item + "'", "scan-days");
        }
    }
    return out;
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

std::string csv(const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out += ',';
            out += r[i];
        }
        out += '\n';
    }
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory", dir.string());
}

// --- gen --------------------------------------------------------------------

struct GenArgs {
    std::string out;
    std::optional<std::string> spec_file;
    std::optional<std::string> kind;
    std::optional<int> n;
    std::optional<int> size;
    std::optional<std::string> scan_days;
    std::optional<int> steps_per_day;
    std::optional<double> tau;
    bool snap_baseline = false;
    std::uint64_t seed = 0;
    int threads = 1;
};

int cmd_gen(const GenArgs& a, bool seed_given, std::ostream& out) {
    CohortSpec spec = a.spec_file ? CohortSpec::from_json(read_text(*a.spec_file)) : CohortSpec{};
    if (a.kind) {
        spec.kind = parse_cancer_kind(*a.kind);
        spec.rules = default_rules(spec.kind);
    }
    if (a.n) spec.n_patients = *a.n;
    if (a.size) spec.width = spec.height = *a.size;
    if (a.scan_days) spec.scan_days = parse_days(*a.scan_days);
    if (a.steps_per_day) spec.steps_per_day = *a.steps_per_day;
    if (a.tau) spec.tau = *a.tau;
    if (a.snap_baseline) spec.snap_baseline = true;
    if (seed_given || !a.spec_file) spec.seed = a.seed;
    spec.validate();
    logger()->info("gen config {}", spec.to_json());
    const CohortManifest m = gen_cohort(spec, a.out, a.threads);
    logger()->info("wrote {} patients to {}", m.patients.size(), a.out);
    out << m.hash << "\n";
    return kOk;
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::optional<std::string> cohort;
    std::optional<std::string> patient;
    std::optional<std::string> patient_dir;
    std::optional<std::string> checkpoint;
    std::string out;
    std::optional<double> horizon;
    RolloutFlags rollout;
    ParamFlags params;
};

PatientRecord pick_patient(const std::optional<std::string>& cohort, const std::optional<std::string>& id,
                           const std::optional<std::string>& dir) {
    if (dir) return read_patient(*dir);
    if (!cohort || !id) throw ConfigError("simulate needs --patient-dir or --cohort with --patient");
    const CohortManifest m = read_manifest(*cohort);
    for (const auto& e : m.patients) {
        if (e.id == *id) return read_patient(fs::path(*cohort) / e.path);
    }
    throw ValidationError("unknown patient '" + *id + "'", "patient");
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    const PatientRecord patient = pick_patient(a.cohort, a.patient, a.patient_dir);
    Checkpoint ckpt;
    if (a.checkpoint) ckpt = read_checkpoint(*a.checkpoint);
    a.params.apply(ckpt.params);
    const RolloutConfig cfg = a.rollout.resolve();
    logger()->info("simulate config {} params D={} k={} alpha_ct={} alpha_rt={} beta_rt={}", config_json(cfg),
                   ckpt.params.D, ckpt.params.k, ckpt.params.alpha_ct, ckpt.params.alpha_rt, ckpt.params.beta_rt);

    const auto& obs = patient.observations;
    const double first = obs.front().day;
    const double horizon = a.horizon ? *a.horizon : obs.back().day;
    std::set<double> days;
    for (double d = std::ceil(first); d <= horizon; d += 1.0) days.insert(d);
    days.insert(first);
    days.insert(horizon);
    std::set<double> snapshot_days{horizon};
    for (const auto& o : obs) {
        if (o.day <= horizon) snapshot_days.insert(o.day);
    }
    days.insert(snapshot_days.begin(), snapshot_days.end());

    ForecastOptions fo;
    fo.horizon_day = horizon;
    fo.sample_days.assign(days.begin(), days.end());
    const BioParams eff = modulate(patient.covariates, ckpt.weights, ckpt.params);
    const auto states = forecast(patient, eff, cfg, fo);

    const fs::path dir(a.out);
    ensure_dir(dir / "masks");
    ensure_dir(dir / "fields");
    const double level = cfg.threshold_tau * eff.theta;
    std::vector<std::vector<std::string>> rows{{"day", "volume_mm2"}};
    double final_volume = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const double d = fo.sample_days[i];
        const BinaryMask m = threshold(states[i].field, level, &patient.anatomy.domain);
        final_volume = mask_volume(m, patient.anatomy.spacing);
        rows.push_back({num(d), num(final_volume)});
        if (snapshot_days.count(d)) {
            write_mask(dir / "masks" / ("day_" + num(d) + ".pgm"), m);
            write_field(dir / "fields" / ("day_" + num(d) + ".socf"), states[i].field, d);
        }
    }
    atomic_write(dir / "volume.csv", csv(rows));
    out << "final_volume_mm2 " << num(final_volume) << "\n";
    return kOk;
}

// --- calibrate ----------------------------------------------------------------

struct CalibrateArgs {
    std::string cohort;
    std::string out;
    int k_folds = 5;
    std::uint64_t seed = 0;
    int threads = 1;
    std::optional<double> lr;
    std::optional<double> lr_weights;
    std::optional<int> iters;
    std::optional<double> clip_norm;
    std::optional<double> soft_temp;
    std::optional<double> weight_init_scale;
    std::optional<std::string> init;
    std::string freeze;
    bool no_train_weights = false;
    bool all_followups = false;
    RolloutFlags rollout;
    ParamFlags params;
};

std::array<bool, 5> parse_freeze(const std::string& text) {
    static const std::array<std::string_view, 5> names{"D", "k", "alpha_ct", "alpha_rt", "beta_rt"};
    std::array<bool, 5> train{true, true, true, true, true};
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        bool found = false;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (item == names[i]) {
                train[i] = false;
                found = true;
            }
        }
        if (!found) throw ValidationError("unknown parameter '" + item + "' in --freeze", "freeze");
    }
    return train;
}

double mean_or_nan(const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_std(v).mean;
}
double std_or_nan(const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_std(v).stddev;
}

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
    const Cohort cohort = load_cohort(a.cohort);
    const std::size_t n = cohort.patients.size();

    ModelState init;
    if (a.init) {
        const Checkpoint c = read_checkpoint(*a.init);
        init.params = c.params;
        init.weights = c.weights;
    }
    a.params.apply(init.params);

    OptimConfig oc;
    if (a.lr) oc.lr_params = *a.lr;
    if (a.lr_weights) oc.lr_weights = *a.lr_weights;
    if (a.iters) oc.max_iters = *a.iters;
    if (a.clip_norm) oc.clip_norm = *a.clip_norm;
    if (a.weight_init_scale) oc.weight_init_scale = *a.weight_init_scale;
    oc.train_weights = !a.no_train_weights;
    oc.train_params = parse_freeze(a.freeze);
    oc.threads = a.threads;
    oc.seed = a.seed;
    oc.validate();
    LossConfig lc;
    if (a.soft_temp) lc.soft_temp = *a.soft_temp;
    lc.all_followups = a.all_followups;
    lc.validate();
    const RolloutConfig cfg = a.rollout.resolve();
    if (a.k_folds < 1) throw ConfigError("--k-folds must be >= 1");
    logger()->info("calibrate optim {} loss {} rollout {} k_folds {}", config_json(oc), config_json(lc),
                   config_json(cfg), a.k_folds);

    std::vector<Fold> folds;
    if (a.k_folds == 1) {
        Fold all;
        for (std::size_t i = 0; i < n; ++i) all.train.push_back(i);
        folds.push_back(std::move(all));
    } else {
        folds = kfold_split(n, a.k_folds, a.seed);
    }

    const fs::path dir(a.out);
    ensure_dir(dir);
    std::vector<std::vector<std::string>> rows{{"fold", "n_train", "n_val", "initial_loss", "final_loss",
                                                "best_iteration", "val_dsc_mean", "val_dsc_std"}};
    json fold_doc = json::array();
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<PatientRecord> train;
        for (std::size_t i : folds[f].train) train.push_back(cohort.patients[i]);
        OptimConfig fold_oc = oc;
        fold_oc.seed = mix_seed(a.seed, f);
        logger()->info("fold {}: {} train / {} val", f, folds[f].train.size(), folds[f].val.size());
        const FitResult r = fit(train, init, fold_oc, lc, cfg);

        Checkpoint ckpt{r.params, r.weights, fold_oc, lc, r.loss_history};
        const fs::path fdir = dir / ("fold_" + std::to_string(f));
        ensure_dir(fdir);
        write_checkpoint(fdir / "checkpoint.json", ckpt);
        std::vector<std::vector<std::string>> hist{{"iteration", "loss"}};
        for (std::size_t i = 0; i < r.loss_history.size(); ++i) hist.push_back({std::to_string(i), num(r.loss_history[i])});
        atomic_write(fdir / "loss.csv", csv(hist));

        std::vector<double> dscs;
        json train_ids = json::array(), val_ids = json::array();
        for (std::size_t i : folds[f].train) train_ids.push_back(cohort.patients[i].id);
        for (std::size_t i : folds[f].val) {
            val_ids.push_back(cohort.patients[i].id);
            dscs.push_back(evaluate_patient(cohort.patients[i], r.params, r.weights, cfg).dsc);
        }
        fold_doc.push_back({{"train", train_ids}, {"val", val_ids}});
        rows.push_back({std::to_string(f), std::to_string(folds[f].train.size()), std::to_string(folds[f].val.size()),
                        num(r.loss_history.front()), num(r.loss_history[static_cast<std::size_t>(r.best_iteration)]),
                        std::to_string(r.best_iteration), num(mean_or_nan(dscs)), num(std_or_nan(dscs))});
        out << "fold " << f << " loss " << num(r.loss_history.front()) << " -> "
            << num(r.loss_history[static_cast<std::size_t>(r.best_iteration)]) << " val_dsc "
            << num(mean_or_nan(dscs)) << "\n";
    }
    atomic_write(dir / "metrics.csv", csv(rows));
    atomic_write(dir / "folds.json", json{{"cohort_hash", cohort.manifest.hash}, {"folds", fold_doc}}.dump(2) + "\n");
    return kOk;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
    std::string cohort;
    std::string out;
    std::optional<std::string> checkpoint;
    std::optional<std::string> calibration;
    std::optional<std::string> predictions;
    RolloutFlags rollout;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const int sources = (a.checkpoint ? 1 : 0) + (a.calibration ? 1 : 0) + (a.predictions ? 1 : 0);
    if (sources != 1) throw ConfigError("eval needs exactly one of --checkpoint, --calibration, --predictions");
    const Cohort cohort = load_cohort(a.cohort);
    const RolloutConfig cfg = a.rollout.resolve();
    logger()->info("eval rollout {}", config_json(cfg));

    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) by_id[cohort.patients[i].id] = i;

    // (fold, patient indices, checkpoint) triples
    struct Group {
        std::vector<std::size_t> patients;
        Checkpoint ckpt;
    };
    std::vector<Group> groups;
    if (a.calibration) {
        const json doc = json::parse(read_text(fs::path(*a.calibration) / "folds.json"));
        const json& folds = doc.at("folds");
        for (std::size_t f = 0; f < folds.size(); ++f) {
            Group g;
            g.ckpt = read_checkpoint(fs::path(*a.calibration) / ("fold_" + std::to_string(f)) / "checkpoint.json");
            for (const auto& id : folds[f].at("val")) {
                const auto it = by_id.find(id.get<std::string>());
                if (it == by_id.end()) throw ValidationError("fold references unknown patient " + id.dump(), "calibration");
                g.patients.push_back(it->second);
            }
            groups.push_back(std::move(g));
        }
    } else {
        Group g;
        if (a.checkpoint) g.ckpt = read_checkpoint(*a.checkpoint);
        for (std::size_t i = 0; i < cohort.patients.size(); ++i) g.patients.push_back(i);
        groups.push_back(std::move(g));
    }

    const fs::path dir(a.out);
    ensure_dir(dir);
    std::vector<std::vector<std::string>> dsc_rows{{"fold", "patient", "dsc"}};
    std::vector<std::vector<std::string>> summary{{"fold", "n", "dsc_mean", "dsc_std"}};
    std::vector<std::vector<std::string>> ttp_rows{{"fold", "patient", "pred_ttp", "true_ttp", "pred_censored",
                                                    "true_censored"}};
    std::vector<double> all_dsc, pred_ttp, true_ttp;
    for (std::size_t f = 0; f < groups.size(); ++f) {
        std::vector<double> dscs;
        for (std::size_t i : groups[f].patients) {
            const PatientRecord& p = cohort.patients[i];
            double d = 0.0;
            if (a.predictions) {
                const BinaryMask pred = read_mask(fs::path(*a.predictions) / (p.id + ".pgm"));
                d = dsc(pred, p.observations.back().mask);
            } else {
                const PatientEval e = evaluate_patient(p, groups[f].ckpt.params, groups[f].ckpt.weights, cfg);
                d = e.dsc;
                if (e.has_truth) {
                    const double pt = e.pred_ttp.value_or(e.horizon);
                    const double tt = e.true_ttp.value_or(e.horizon);
                    pred_ttp.push_back(pt);
                    true_ttp.push_back(tt);
                    ttp_rows.push_back({std::to_string(f), p.id, num(pt), num(tt), e.pred_ttp ? "0" : "1",
                                        e.true_ttp ? "0" : "1"});
                }
            }
            dscs.push_back(d);
            all_dsc.push_back(d);
            dsc_rows.push_back({std::to_string(f), p.id, num(d)});
        }
        summary.push_back({std::to_string(f), std::to_string(dscs.size()), num(mean_or_nan(dscs)), num(std_or_nan(dscs))});
        out << "fold " << f << " DSC " << fmt::format("{:.4f} +- {:.4f}", mean_or_nan(dscs), std_or_nan(dscs)) << "\n";
    }
    summary.push_back({"all", std::to_string(all_dsc.size()), num(mean_or_nan(all_dsc)), num(std_or_nan(all_dsc))});
    out << "all DSC " << fmt::format("{:.4f} +- {:.4f}", mean_or_nan(all_dsc), std_or_nan(all_dsc)) << "\n";
    atomic_write(dir / "dsc.csv", csv(dsc_rows));
    atomic_write(dir / "dsc_summary.csv", csv(summary));
    if (!a.predictions) {
        atomic_write(dir / "ttp.csv", csv(ttp_rows));
        std::vector<std::vector<std::string>> ts{{"n", "mae", "rmse"}};
        if (!pred_ttp.empty()) {
            const ErrorSummary s = mae_rmse(pred_ttp, true_ttp);
            ts.push_back({std::to_string(pred_ttp.size()), num(s.mae), num(s.rmse)});
            out << "TTP MAE " << num(s.mae) << " RMSE " << num(s.rmse) << "\n";
        }
        atomic_write(dir / "ttp_summary.csv", csv(ts));
    }
    return kOk;
}

// --- serve --------------------------------------------------------------------

struct ServeArgs {
    std::string cohort;
    std::optional<std::string> checkpoint;
    std::string bind = "127.0.0.1:8080";
    std::optional<double> async_threshold;
    RolloutFlags rollout;
};

std::atomic<TwinService*> g_service{nullptr};

extern "C" void on_signal(int) {
    if (TwinService* s = g_service.load()) s->stop();
}

int cmd_serve(const ServeArgs& a, std::ostream& out) {
    const auto colon = a.bind.rfind(':');
    if (colon == std::string::npos) throw ConfigError("--bind must be host:port");
    const std::string host = a.bind.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(a.bind.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("--bind port is not a number");
    }
    if (port < 0 || port > 65535) throw ConfigError("--bind port out of range");

    Cohort cohort = load_cohort(a.cohort);
    Checkpoint ckpt;
    if (a.checkpoint) ckpt = read_checkpoint(*a.checkpoint);
    ServiceOptions opts;
    opts.rollout = a.rollout.resolve();
    if (a.async_threshold) opts.async_threshold_seconds = *a.async_threshold;
    logger()->info("serve rollout {} cohort {} ({} patients)", config_json(opts.rollout), cohort.manifest.hash,
                   cohort.patients.size());
    TwinService svc(std::move(cohort), std::move(ckpt), opts);
    g_service = &svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    out << "listening on " << a.bind << "\n" << std::flush;
    svc.serve(host, port);
    g_service = nullptr;
    return kOk;
}

void print_error(std::ostream& err, std::string_view kind, int code, std::string_view message,
                 std::string_view field = {}) {
    json line = {{"error", kind}, {"exit", code}, {"message", message}};
    line["field"] = field.empty() ? json(nullptr) : json(field);
    err << line.dump() << "\n";
}

}  // namespace

PatientEval evaluate_patient(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                             const RolloutConfig& cfg) {
    const BioParams eff = modulate(patient.covariates, weights, params);
    const auto& obs = patient.observations;
    const double first = obs.front().day;
    const double last = obs.back().day;
    const double level = cfg.threshold_tau * eff.theta;
    const double voxel_area = patient.anatomy.spacing * patient.anatomy.spacing;

    PatientEval e;
    e.id = patient.id;
    e.horizon = last;

    std::set<double> days{first, last};
    for (double d = std::ceil(first); d <= last; d += 1.0) days.insert(d);
    ForecastOptions fo;
    fo.horizon_day = last;
    fo.sample_days.assign(days.begin(), days.end());
    const auto states = forecast(patient, eff, cfg, fo);
    // Progression counts from treatment onset; earlier growth is baseline.
    double onset = first;
    {
        double t = std::numeric_limits<double>::infinity();
        for (const auto& s : patient.timeline.surgeries) t = std::min(t, s.day);
        for (const auto& f : patient.timeline.rt) t = std::min(t, f.day);
        for (const auto& c : patient.timeline.chemo) t = std::min(t, c.start_day);
        if (std::isfinite(t)) onset = std::clamp(t, first, last);
    }
    std::vector<VolumePoint> pred;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (fo.sample_days[i] < onset) continue;
        pred.push_back({fo.sample_days[i],
                        mask_volume(threshold(states[i].field, level, &patient.anatomy.domain), patient.anatomy.spacing)});
    }
    e.dsc = dsc(threshold(states.back().field, level, &patient.anatomy.domain), obs.back().mask);
    e.pred_ttp = time_to_progression(pred, voxel_area);

    if (patient.truth) {
        std::vector<VolumePoint> truth;
        for (const auto& [d, v] : patient.truth->volume_curve) {
            if (d >= onset && d <= last) truth.push_back({d, v});
        }
        if (!truth.empty()) {
            e.has_truth = true;
            e.true_ttp = time_to_progression(truth, voxel_area);
        }
    }
    return e;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"soctwin: standard-of-care tumour digital twin"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "soctwin 0.3.0");

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a synthetic cohort");
    g->add_option("--out", gen.out, "cohort directory")->required();
    g->add_option("--spec", gen.spec_file, "CohortSpec JSON file; flags override it");
    g->add_option("--kind", gen.kind, "AG | HCC | NAC");
    g->add_option("--n", gen.n, "number of patients");
    g->add_option("--size", gen.size, "grid width and height");
    g->add_option("--scan-days", gen.scan_days, "fixed scan calendar, comma separated");
    g->add_option("--steps-per-day", gen.steps_per_day, "generator sub-steps per day");
    g->add_option("--tau", gen.tau, "mask threshold fraction");
    g->add_flag("--snap-baseline", gen.snap_baseline, "snap the baseline state to theta on its mask");
    g->add_option("--seed", gen.seed, "generation seed");
    g->add_option("--threads", gen.threads, "worker threads")->check(CLI::PositiveNumber);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "roll one patient out and write masks, fields and volumes");
    s->add_option("--cohort", sim.cohort, "cohort directory");
    s->add_option("--patient", sim.patient, "patient id within --cohort");
    s->add_option("--patient-dir", sim.patient_dir, "patient directory");
    s->add_option("--checkpoint", sim.checkpoint, "checkpoint JSON");
    s->add_option("--out", sim.out, "output directory")->required();
    s->add_option("--horizon", sim.horizon, "last simulated day (default: last observation)");
    sim.rollout.add(*s);
    sim.params.add(*s);

    CalibrateArgs cal;
    auto* c = app.add_subcommand("calibrate", "fit parameters with patient-wise K-fold cross-validation");
    c->add_option("--cohort", cal.cohort, "cohort directory")->required();
    c->add_option("--out", cal.out, "output directory")->required();
    c->add_option("--k-folds", cal.k_folds, "folds (1 fits the whole cohort)");
    c->add_option("--seed", cal.seed, "fold and optimiser seed");
    c->add_option("--threads", cal.threads, "worker threads")->check(CLI::PositiveNumber);
    c->add_option("--lr", cal.lr, "Adam step on log parameters");
    c->add_option("--lr-weights", cal.lr_weights, "Adam step on modulator weights");
    c->add_option("--iters", cal.iters, "Adam iterations");
    c->add_option("--clip-norm", cal.clip_norm, "gradient L2 clip");
    c->add_option("--soft-temp", cal.soft_temp, "soft threshold temperature");
    c->add_option("--weight-init-scale", cal.weight_init_scale, "initial weight noise");
    c->add_option("--init", cal.init, "initial checkpoint");
    c->add_option("--freeze", cal.freeze, "comma separated parameters kept fixed");
    c->add_flag("--no-train-weights", cal.no_train_weights, "keep modulator weights fixed");
    c->add_flag("--all-followups", cal.all_followups, "score every follow-up observation");
    cal.rollout.add(*c);
    cal.params.add(*c);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score predictions: DSC per fold and TTP errors");
    e->add_option("--cohort", ev.cohort, "cohort directory")->required();
    e->add_option("--out", ev.out, "output directory")->required();
    e->add_option("--checkpoint", ev.checkpoint, "single checkpoint for every patient");
    e->add_option("--calibration", ev.calibration, "calibrate output directory (per-fold validation)");
    e->add_option("--predictions", ev.predictions, "directory of <id>.pgm final-day masks");
    ev.rollout.add(*e);

    ServeArgs sv;
    auto* v = app.add_subcommand("serve", "run the scenario HTTP service");
    v->add_option("--cohort", sv.cohort, "cohort directory")->required();
    v->add_option("--checkpoint", sv.checkpoint, "checkpoint JSON");
    v->add_option("--bind", sv.bind, "host:port");
    v->add_option("--async-threshold", sv.async_threshold, "seconds above which requests become jobs");
    sv.rollout.add(*v);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion& ex) {
        out << ex.what() << "\n";
        return kOk;
    } catch (const CLI::ParseError& ex) {
        print_error(err, "usage", kUsage, ex.what());
        return kUsage;
    }

    try {
        if (*g) return cmd_gen(gen, g->count("--seed") > 0, out);
        if (*s) return cmd_simulate(sim, out);
        if (*c) return cmd_calibrate(cal, out);
        if (*e) return cmd_eval(ev, out);
        if (*v) return cmd_serve(sv, out);
    } catch (const ValidationError& ex) {
        print_error(err, to_string(ex.kind()), exit_code(ex.kind()), ex.what(), ex.field());
        return exit_code(ex.kind());
    } catch (const Error& ex) {
        print_error(err, to_string(ex.kind()), exit_code(ex.kind()), ex.what());
        return exit_code(ex.kind());
    } catch (const json::exception& ex) {
        print_error(err, "format", kFormat, ex.what());
        return kFormat;
    } catch (const std::exception& ex) {
        print_error(err, "internal", kInternal, ex.what());
        return kInternal;
    }
    return kUsage;
}

}  // namespace soctwin::cli
