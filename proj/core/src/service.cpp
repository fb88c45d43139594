#include "soctwin/service.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "json_codec.hpp"
#include "soctwin/error.hpp"
#include "soctwin/metrics.hpp"
#include "soctwin/personalize.hpp"

namespace soctwin {

using codec::json;

namespace {

// Request-level failure carrying the HTTP status and the structured body.
struct RequestError {
    int status;
    std::string code;
    std::string message;
    std::string field;
};

[[noreturn]] void unprocessable(std::string message, std::string field) {
    throw RequestError{422, "invalid_request", std::move(message), std::move(field)};
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpResponse error_response(const RequestError& e) {
    json body = {{"code", e.code}, {"message", e.message}};
    body["field"] = e.field.empty() ? json(nullptr) : json(e.field);
    return json_response(e.status, body);
}

std::string base64(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

double number_at(const json& j, const char* key, std::string_view field, std::optional<double> fallback = {}) {
    const auto it = j.find(key);
    if (it == j.end()) {
        if (fallback) return *fallback;
        unprocessable(std::string("missing '") + key + "'", std::string(field));
    }
    if (!it->is_number()) unprocessable(std::string("'") + key + "' must be a number", std::string(field));
    const double v = it->get<double>();
    if (!std::isfinite(v)) unprocessable(std::string("'") + key + "' must be finite", std::string(field));
    return v;
}

int int_at(const json& j, const char* key, std::string_view field, std::optional<int> fallback = {}) {
    const auto it = j.find(key);
    if (it == j.end()) {
        if (fallback) return *fallback;
        unprocessable(std::string("missing '") + key + "'", std::string(field));
    }
    if (!it->is_number_integer()) unprocessable(std::string("'") + key + "' must be an integer", std::string(field));
    return it->get<int>();
}

std::string string_at(const json& j, const char* key, std::string_view field,
                      std::optional<std::string> fallback = {}) {
    const auto it = j.find(key);
    if (it == j.end()) {
        if (fallback) return *fallback;
        unprocessable(std::string("missing '") + key + "'", std::string(field));
    }
    if (!it->is_string()) unprocessable(std::string("'") + key + "' must be a string", std::string(field));
    return it->get<std::string>();
}

enum class EventKind { Rt, Chemo, Surgery };

EventKind event_kind(const json& op, const std::string& field) {
    const std::string kind = string_at(op, "kind", field);
    if (kind == "rt") return EventKind::Rt;
    if (kind == "chemo") return EventKind::Chemo;
    if (kind == "surgery") return EventKind::Surgery;
    unprocessable("unknown event kind '" + kind + "'", field);
}

std::size_t event_count(const TreatmentTimeline& tl, EventKind kind) {
    switch (kind) {
        case EventKind::Rt: return tl.rt.size();
        case EventKind::Chemo: return tl.chemo.size();
        case EventKind::Surgery: return tl.surgeries.size();
    }
    return 0;
}

std::size_t event_index(const json& op, const TreatmentTimeline& tl, EventKind kind, const std::string& field) {
    const int idx = int_at(op, "index", field);
    if (idx < 0 || static_cast<std::size_t>(idx) >= event_count(tl, kind)) {
        unprocessable("event index " + std::to_string(idx) + " out of range", field);
    }
    return static_cast<std::size_t>(idx);
}

void sort_events(TreatmentTimeline& tl) {
    std::stable_sort(tl.rt.begin(), tl.rt.end(), [](const auto& a, const auto& b) { return a.day < b.day; });
    std::stable_sort(tl.chemo.begin(), tl.chemo.end(),
                     [](const auto& a, const auto& b) { return a.start_day < b.start_day; });
    std::vector<std::size_t> order(tl.surgeries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return tl.surgeries[a].day < tl.surgeries[b].day; });
    std::vector<SurgeryEvent> sorted;
    sorted.reserve(order.size());
    for (std::size_t i : order) sorted.push_back(std::move(tl.surgeries[i]));
    tl.surgeries = std::move(sorted);
}

void apply_edit(TreatmentTimeline& tl, const json& op, const std::string& field) {
    if (!op.is_object()) unprocessable("edit must be an object", field);
    const std::string name = string_at(op, "op", field);
    if (name == "add") {
        const EventKind kind = event_kind(op, field);
        const auto it = op.find("event");
        if (it == op.end() || !it->is_object()) unprocessable("'add' needs an 'event' object", field);
        const json& ev = *it;
        switch (kind) {
            case EventKind::Rt:
                tl.rt.push_back({number_at(ev, "day", field), number_at(ev, "dose", field, 2.0)});
                break;
            case EventKind::Chemo: {
                ChemoCourse c;
                c.start_day = number_at(ev, "start_day", field);
                c.amplitude = number_at(ev, "amplitude", field, 1.0);
                c.decay_rate = number_at(ev, "decay_rate", field, 0.0);
                c.kind = string_at(ev, "kind", field, std::string("TMZ"));
                tl.chemo.push_back(std::move(c));
                break;
            }
            case EventKind::Surgery: {
                SurgeryMode mode = SurgeryMode::Mul;
                try {
                    mode = parse_surgery_mode(string_at(ev, "mode", field, std::string("Mul")));
                } catch (const ValidationError& e) {
                    unprocessable(e.what(), field);
                }
                const double day = number_at(ev, "day", field);
                const double extent = number_at(ev, "extent", field, 1.0);
                const int erosion = int_at(ev, "erosion_radius", field, 1);
                const int rim = int_at(ev, "rim_width", field, 1);
                auto& s = tl.surgeries.emplace_back();
                s.day = day;
                s.mode = mode;
                s.extent = extent;
                s.erosion_radius = erosion;
                s.rim_width = rim;
                break;
            }
        }
    } else if (name == "remove") {
        const EventKind kind = event_kind(op, field);
        const std::size_t i = event_index(op, tl, kind, field);
        switch (kind) {
            case EventKind::Rt: tl.rt.erase(tl.rt.begin() + static_cast<std::ptrdiff_t>(i)); break;
            case EventKind::Chemo: tl.chemo.erase(tl.chemo.begin() + static_cast<std::ptrdiff_t>(i)); break;
            case EventKind::Surgery:
                tl.surgeries.erase(tl.surgeries.begin() + static_cast<std::ptrdiff_t>(i));
                break;
        }
    } else if (name == "remove_all") {
        switch (event_kind(op, field)) {
            case EventKind::Rt: tl.rt.clear(); break;
            case EventKind::Chemo: tl.chemo.clear(); break;
            case EventKind::Surgery: tl.surgeries.clear(); break;
        }
    } else if (name == "move") {
        const EventKind kind = event_kind(op, field);
        const std::size_t i = event_index(op, tl, kind, field);
        const double day = number_at(op, "day", field);
        switch (kind) {
            case EventKind::Rt: tl.rt[i].day = day; break;
            case EventKind::Chemo: tl.chemo[i].start_day = day; break;
            case EventKind::Surgery: tl.surgeries[i].day = day; break;
        }
    } else if (name == "set_dose") {
        const std::size_t i = event_index(op, tl, EventKind::Rt, field);
        tl.rt[i].dose = number_at(op, "dose", field);
    } else if (name == "set_amplitude") {
        const std::size_t i = event_index(op, tl, EventKind::Chemo, field);
        tl.chemo[i].amplitude = number_at(op, "amplitude", field);
    } else if (name == "set_kill_mode") {
        try {
            tl.kill_mode = parse_kill_mode(string_at(op, "mode", field));
        } catch (const ValidationError& e) {
            unprocessable(e.what(), field);
        }
    } else {
        unprocessable("unknown edit op '" + name + "'", field);
    }
    sort_events(tl);
}

void apply_overrides(BioParams& p, const json& deltas) {
    if (!deltas.is_object()) unprocessable("param_overrides must be an object", "param_overrides");
    for (const auto& [key, value] : deltas.items()) {
        if (!value.is_number() || !std::isfinite(value.get<double>())) {
            unprocessable("override '" + key + "' must be a finite number", "param_overrides." + key);
        }
        const double d = value.get<double>();
        if (key == "D") p.D += d;
        else if (key == "k") p.k += d;
        else if (key == "theta") p.theta += d;
        else if (key == "alpha_ct") p.alpha_ct += d;
        else if (key == "alpha_rt") p.alpha_rt += d;
        else if (key == "beta_rt") p.beta_rt += d;
        else unprocessable("unknown parameter '" + key + "'", "param_overrides." + key);
    }
    try {
        p.validate();
    } catch (const ValidationError& e) {
        unprocessable(e.what(), "param_overrides");
    }
}

struct Scenario {
    PatientRecord patient;  // copy carrying the effective timeline
    BioParams params;
    RolloutConfig cfg;
    double horizon = 0.0;
    std::vector<double> mask_days;
};

json run_scenario(const Scenario& sc) {
    const auto& obs = sc.patient.observations;
    const double first = obs.front().day;
    const double last_obs = obs.back().day;

    std::set<double> curve_days;
    for (double d = std::ceil(first); d <= sc.horizon; d += 1.0) curve_days.insert(d);
    curve_days.insert(first);
    curve_days.insert(sc.horizon);
    std::set<double> samples = curve_days;
    samples.insert(sc.mask_days.begin(), sc.mask_days.end());
    samples.insert(last_obs);

    ForecastOptions fo;
    fo.horizon_day = sc.horizon;
    fo.sample_days.assign(samples.begin(), samples.end());
    const auto states = forecast(sc.patient, sc.params, sc.cfg, fo);

    const DomainMask& domain = sc.patient.anatomy.domain;
    const double level = sc.cfg.threshold_tau * sc.params.theta;
    const double spacing = sc.patient.anatomy.spacing;
    std::map<double, BinaryMask> masks;
    for (std::size_t i = 0; i < states.size(); ++i) {
        masks.emplace(fo.sample_days[i], threshold(states[i].field, level, &domain));
    }

    json curve = json::array();
    std::vector<VolumePoint> trajectory;
    for (double d : curve_days) {
        const double v = mask_volume(masks.at(d), spacing);
        curve.push_back({d, v});
        trajectory.push_back({d, v});
    }
    json mask_list = json::array();
    for (double d : sc.mask_days) {
        mask_list.push_back({{"day", d}, {"pgm_base64", base64(encode_pgm(masks.at(d)))}});
    }
    const auto ttp = time_to_progression(trajectory, spacing * spacing);

    return {{"patient_id", sc.patient.id},
            {"horizon_day", sc.horizon},
            {"volume_curve", curve},
            {"masks", mask_list},
            {"dsc_last_observation", dsc(masks.at(last_obs), obs.back().mask)},
            {"ttp_day", ttp ? json(*ttp) : json(nullptr)},
            {"params", codec::to_json(sc.params)},
            {"timeline", codec::to_json(sc.patient.timeline)}};
}

HttpResponse run_guarded(const Scenario& sc) {
    try {
        return json_response(200, run_scenario(sc));
    } catch (const SolverError& e) {
        json body = {{"code", "solver_failure"},
                     {"message", e.what()},
                     {"field", nullptr},
                     {"residual", e.residual()},
                     {"iterations", e.iterations()}};
        return json_response(500, body);
    } catch (const ValidationError& e) {
        return error_response({422, "invalid_request", e.what(), e.field()});
    } catch (const std::exception& e) {
        return error_response({500, "internal", e.what(), {}});
    }
}

double measure_step_cost() {
    constexpr int n = 32;
    constexpr int days = 8;
    const DomainMask domain = DomainMask::full(n, n);
    const SpatialModel model(domain, 1.0);
    ScalarField u(n, n, 1.0, 0.0);
    for (int y = 12; y < 20; ++y) {
        for (int x = 12; x < 20; ++x) u(x, y) = 1.0;
    }
    RolloutConfig cfg;
    cfg.steps_per_day = 1;
    const auto t0 = std::chrono::steady_clock::now();
    step_interval(TwinState{u, 0.0}, days, BioParams{}, TreatmentTimeline{}, model, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return std::max(secs, 1e-9) / (static_cast<double>(n) * n * days);
}

}  // namespace

struct TwinService::Server {
    httplib::Server http;
};

TwinService::TwinService(Cohort cohort, Checkpoint checkpoint, ServiceOptions options)
    : cohort_(std::move(cohort)), checkpoint_(std::move(checkpoint)), options_(std::move(options)) {
    options_.rollout.validate();
    checkpoint_.params.validate();
    checkpoint_.weights.validate();
    step_cost_ = options_.step_cost ? *options_.step_cost : measure_step_cost();
}

TwinService::~TwinService() {
    stop();
    std::lock_guard lock(jobs_mutex_);
    for (auto& [token, job] : jobs_) job.wait();
}

const PatientRecord* TwinService::find_patient(std::string_view id) const {
    for (const auto& p : cohort_.patients) {
        if (p.id == id) return &p;
    }
    return nullptr;
}

HttpResponse TwinService::handle(std::string_view method, std::string_view path, std::string_view body) {
    if (const auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
    try {
        return route(method, path, body);
    } catch (const RequestError& e) {
        return error_response(e);
    } catch (const std::exception& e) {
        return error_response({500, "internal", e.what(), {}});
    }
}

HttpResponse TwinService::route(std::string_view method, std::string_view path, std::string_view body) {
    const auto require_method = [&](std::string_view want) {
        if (method != want) {
            throw RequestError{405, "method_not_allowed", std::string(method) + " not allowed on " + std::string(path), {}};
        }
    };

    if (path == "/healthz") {
        require_method("GET");
        return json_response(200, {{"status", "ok"},
                                   {"version", options_.version},
                                   {"build", std::string("c++") + std::to_string(__cplusplus)},
                                   {"cohort_hash", cohort_.manifest.hash},
                                   {"patients", cohort_.patients.size()}});
    }
    if (path == "/patients") {
        require_method("GET");
        json list = json::array();
        for (const auto& p : cohort_.patients) {
            json days = json::array();
            for (const auto& o : p.observations) days.push_back(o.day);
            list.push_back({{"id", p.id}, {"scan_days", days}, {"covariates", codec::to_json(p.covariates)}});
        }
        return json_response(200, {{"patients", list}});
    }
    if (path.starts_with("/patients/")) {
        require_method("GET");
        const std::string id(path.substr(std::string_view("/patients/").size()));
        const PatientRecord* p = find_patient(id);
        if (!p) throw RequestError{404, "not_found", "unknown patient '" + id + "'", "patient_id"};
        Scenario sc{*p, modulate(p->covariates, checkpoint_.weights, checkpoint_.params), options_.rollout,
                    p->observations.back().day, {}};
        HttpResponse baseline = run_guarded(sc);
        if (baseline.status != 200) return baseline;
        json out = {{"patient", codec::parse(patient_to_json(*p))},
                    {"baseline_curve", codec::parse(baseline.body).at("volume_curve")}};
        return json_response(200, out);
    }
    if (path == "/simulate" || path == "/whatif") {
        require_method("POST");
        return scenario(body, path == "/whatif");
    }
    if (path.starts_with("/jobs/")) {
        require_method("GET");
        return job_status(std::string(path.substr(std::string_view("/jobs/").size())));
    }
    throw RequestError{404, "not_found", "no route for " + std::string(path), {}};
}

HttpResponse TwinService::scenario(std::string_view body, bool allow_edits) {
    json req;
    try {
        req = codec::parse(body);
    } catch (const FormatError& e) {
        throw RequestError{400, "bad_request", e.what(), {}};
    }
    if (!req.is_object()) throw RequestError{400, "bad_request", "request body must be a JSON object", {}};

    const std::string id = string_at(req, "patient_id", "patient_id");
    const PatientRecord* p = find_patient(id);
    if (!p) throw RequestError{404, "not_found", "unknown patient '" + id + "'", "patient_id"};

    Scenario sc{*p, modulate(p->covariates, checkpoint_.weights, checkpoint_.params), options_.rollout, 0.0, {}};
    const double first = p->observations.front().day;
    const double last = p->observations.back().day;

    sc.horizon = number_at(req, "horizon_day", "horizon_day", last);
    if (sc.horizon < last) unprocessable("horizon_day precedes the last observation", "horizon_day");

    if (const auto it = req.find("mask_days"); it != req.end()) {
        if (!it->is_array()) unprocessable("mask_days must be an array", "mask_days");
        for (const auto& d : *it) {
            if (!d.is_number() || !(d.get<double>() >= first && d.get<double>() <= sc.horizon)) {
                unprocessable("mask day outside [first observation, horizon]", "mask_days");
            }
            sc.mask_days.push_back(d.get<double>());
        }
    }
    if (const auto it = req.find("param_overrides"); it != req.end()) apply_overrides(sc.params, *it);
    if (const auto it = req.find("config"); it != req.end()) {
        try {
            sc.cfg = codec::rollout_config_from_json(*it, sc.cfg);
            sc.cfg.validate();
        } catch (const Error& e) {
            unprocessable(e.what(), "config");
        }
    }
    if (const auto it = req.find("edits"); it != req.end()) {
        if (!allow_edits) unprocessable("edits are only accepted by /whatif", "edits");
        if (!it->is_array()) unprocessable("edits must be an array", "edits");
        for (std::size_t i = 0; i < it->size(); ++i) apply_edit(sc.patient.timeline, (*it)[i], "edits[" + std::to_string(i) + "]");
        try {
            sc.patient.timeline.validate();
        } catch (const ValidationError& e) {
            unprocessable(e.what(), "edits");
        }
    }

    const double substeps = (sc.horizon - first) * sc.cfg.steps_per_day;
    const double estimate = static_cast<double>(p->anatomy.domain.size()) * substeps * step_cost_;
    if (estimate <= options_.async_threshold_seconds) return run_guarded(sc);

    std::lock_guard lock(jobs_mutex_);
    const std::string token = "job-" + std::to_string(next_job_++);
    jobs_.emplace(token, std::async(std::launch::async, [sc = std::move(sc)] { return run_guarded(sc); }).share());
    return json_response(202, {{"token", token},
                               {"status", "running"},
                               {"poll", "/jobs/" + token},
                               {"estimated_seconds", estimate}});
}

HttpResponse TwinService::job_status(const std::string& token) {
    std::shared_future<HttpResponse> job;
    {
        std::lock_guard lock(jobs_mutex_);
        const auto it = jobs_.find(token);
        if (it == jobs_.end()) throw RequestError{404, "not_found", "unknown job '" + token + "'", "token"};
        job = it->second;
    }
    if (job.wait_for(std::chrono::seconds(0)) != std::future_status::ready) {
        return json_response(202, {{"token", token}, {"status", "running"}});
    }
    return job.get();
}

namespace {

void install_routes(httplib::Server& http, TwinService& svc) {
    const auto forward = [&svc](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = svc.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    http.Get(".*", forward);
    http.Post(".*", forward);
    http.Put(".*", forward);
    http.Delete(".*", forward);
}

}  // namespace

void TwinService::serve(const std::string& host, int port) {
    server_ = std::make_unique<Server>();
    install_routes(server_->http, *this);
    if (!server_->http.listen(host, port)) {
        throw IoError("cannot listen", host + ":" + std::to_string(port));
    }
}

int TwinService::bind_any(const std::string& host) {
    server_ = std::make_unique<Server>();
    install_routes(server_->http, *this);
    const int port = server_->http.bind_to_any_port(host);
    if (port < 0) throw IoError("cannot bind", host);
    return port;
}

void TwinService::serve_bound() {
    if (!server_) throw StateError("serve_bound() before bind_any()");
    server_->http.listen_after_bind();
}

void TwinService::stop() {
    if (server_) server_->http.stop();
}

}  // namespace soctwin
