#include "json_codec.hpp"

#include "soctwin/error.hpp"

namespace soctwin::codec {

const json& require(const json& j, std::string_view key) {
    if (!j.is_object()) throw FormatError("expected a JSON object holding '" + std::string(key) + "'", 0);
    const auto it = j.find(key);
    if (it == j.end()) throw FormatError("missing required key '" + std::string(key) + "'", 0);
    return *it;
}

double get_number(const json& j, std::string_view key) {
    const json& v = require(j, key);
    if (!v.is_number()) throw FormatError("key '" + std::string(key) + "' must be a number", 0);
    return v.get<double>();
}

int get_int(const json& j, std::string_view key) {
    const json& v = require(j, key);
    if (!v.is_number_integer()) throw FormatError("key '" + std::string(key) + "' must be an integer", 0);
    return v.get<int>();
}

std::string get_string(const json& j, std::string_view key) {
    const json& v = require(j, key);
    if (!v.is_string()) throw FormatError("key '" + std::string(key) + "' must be a string", 0);
    return v.get<std::string>();
}

namespace {

std::vector<double> get_vector(const json& j, std::string_view key) {
    const json& v = require(j, key);
    if (!v.is_array()) throw FormatError("key '" + std::string(key) + "' must be an array", 0);
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        if (!e.is_number()) throw FormatError("key '" + std::string(key) + "' must hold numbers", 0);
        out.push_back(e.get<double>());
    }
    return out;
}

template <class T>
void overlay(const json& j, std::string_view key, T& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("bad value for '" + std::string(key) + "'", std::string(key));
    }
}

}  // namespace

json to_json(const BioParams& p) {
    return {{"D", p.D},           {"k", p.k},           {"theta", p.theta},
            {"alpha_ct", p.alpha_ct}, {"alpha_rt", p.alpha_rt}, {"beta_rt", p.beta_rt}};
}

BioParams bio_params_from_json(const json& j) {
    BioParams p;
    p.D = get_number(j, "D");
    p.k = get_number(j, "k");
    p.theta = get_number(j, "theta");
    p.alpha_ct = get_number(j, "alpha_ct");
    p.alpha_rt = get_number(j, "alpha_rt");
    p.beta_rt = get_number(j, "beta_rt");
    return p;
}

json to_json(const Covariates& c) {
    json markers = json::object();
    for (const auto& [name, on] : c.markers) markers[name] = on;
    return {{"kind", std::string(to_string(c.kind))},
            {"age_years", c.age_years},
            {"grade", c.grade},
            {"markers", markers}};
}

Covariates covariates_from_json(const json& j) {
    Covariates c;
    c.kind = parse_cancer_kind(get_string(j, "kind"));
    c.age_years = get_number(j, "age_years");
    c.grade = get_int(j, "grade");
    const json& m = require(j, "markers");
    if (!m.is_object()) throw FormatError("'markers' must be an object", 0);
    for (const auto& [name, on] : m.items()) {
        if (!on.is_boolean()) throw FormatError("marker '" + name + "' must be a boolean", 0);
        c.markers[name] = on.get<bool>();
    }
    return c;
}

json to_json(const TreatmentTimeline& tl, const std::vector<std::string>* resection_refs) {
    json surg = json::array();
    for (std::size_t i = 0; i < tl.surgeries.size(); ++i) {
        const auto& s = tl.surgeries[i];
        json e = {{"day", s.day},
                  {"mode", std::string(to_string(s.mode))},
                  {"extent", s.extent},
                  {"erosion_radius", s.erosion_radius},
                  {"rim_width", s.rim_width}};
        if (s.resection) {
            e["resection"] = resection_refs && i < resection_refs->size() ? (*resection_refs)[i] : "inline";
        } else {
            e["resection"] = nullptr;
        }
        surg.push_back(std::move(e));
    }
    json rt = json::array();
    for (const auto& f : tl.rt) rt.push_back({{"day", f.day}, {"dose", f.dose}});
    json chemo = json::array();
    for (const auto& c : tl.chemo) {
        chemo.push_back(
            {{"start_day", c.start_day}, {"amplitude", c.amplitude}, {"decay_rate", c.decay_rate}, {"kind", c.kind}});
    }
    return {{"surgeries", surg},
            {"rt", rt},
            {"chemo", chemo},
            {"kill_mode", std::string(to_string(tl.kill_mode))},
            {"synergy_gain", tl.synergy_gain},
            {"saturation_half", tl.saturation_half}};
}

TreatmentTimeline timeline_from_json(const json& j, std::vector<std::string>* resection_refs) {
    TreatmentTimeline tl;
    const json& surg = require(j, "surgeries");
    const json& rt = require(j, "rt");
    const json& chemo = require(j, "chemo");
    if (!surg.is_array() || !rt.is_array() || !chemo.is_array()) {
        throw FormatError("timeline event lists must be arrays", 0);
    }
    if (resection_refs) resection_refs->clear();
    for (const auto& e : surg) {
        SurgeryEvent s;
        s.day = get_number(e, "day");
        s.mode = parse_surgery_mode(get_string(e, "mode"));
        s.extent = get_number(e, "extent");
        s.erosion_radius = get_int(e, "erosion_radius");
        s.rim_width = get_int(e, "rim_width");
        std::string ref;
        if (const auto it = e.find("resection"); it != e.end() && it->is_string()) ref = it->get<std::string>();
        if (resection_refs) resection_refs->push_back(ref);
        tl.surgeries.push_back(std::move(s));
    }
    for (const auto& e : rt) tl.rt.push_back({get_number(e, "day"), get_number(e, "dose")});
    for (const auto& e : chemo) {
        ChemoCourse c;
        c.start_day = get_number(e, "start_day");
        c.amplitude = get_number(e, "amplitude");
        c.decay_rate = get_number(e, "decay_rate");
        c.kind = get_string(e, "kind");
        tl.chemo.push_back(std::move(c));
    }
    tl.kill_mode = parse_kill_mode(get_string(j, "kill_mode"));
    tl.synergy_gain = get_number(j, "synergy_gain");
    tl.saturation_half = get_number(j, "saturation_half");
    return tl;
}

json to_json(const ModulatorWeights& w) {
    return {{"input_dim", w.input_dim}, {"hidden", w.hidden},     {"w1", w.w1},
            {"b1", w.b1},               {"w2", w.w2},             {"b2", w.b2},
            {"clamp_lo", w.clamp_lo},   {"clamp_hi", w.clamp_hi}};
}

ModulatorWeights weights_from_json(const json& j) {
    ModulatorWeights w;
    w.input_dim = get_int(j, "input_dim");
    w.hidden = get_int(j, "hidden");
    w.w1 = get_vector(j, "w1");
    w.b1 = get_vector(j, "b1");
    w.w2 = get_vector(j, "w2");
    w.b2 = get_vector(j, "b2");
    w.clamp_lo = get_number(j, "clamp_lo");
    w.clamp_hi = get_number(j, "clamp_hi");
    w.validate();
    return w;
}

json to_json(const OptimConfig& o) {
    return {{"lr_params", o.lr_params},
            {"lr_weights", o.lr_weights},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"adam_eps", o.adam_eps},
            {"clip_norm", o.clip_norm},
            {"max_iters", o.max_iters},
            {"seed", o.seed},
            {"train_weights", o.train_weights},
            {"train_params", o.train_params},
            {"threads", o.threads},
            {"weight_init_scale", o.weight_init_scale},
            {"grad_check", o.grad_check}};
}

OptimConfig optim_from_json(const json& j) {
    OptimConfig o;
    o.lr_params = get_number(j, "lr_params");
    o.lr_weights = get_number(j, "lr_weights");
    o.beta1 = get_number(j, "beta1");
    o.beta2 = get_number(j, "beta2");
    o.adam_eps = get_number(j, "adam_eps");
    o.clip_norm = get_number(j, "clip_norm");
    o.max_iters = get_int(j, "max_iters");
    const json& seed = require(j, "seed");
    if (!seed.is_number_unsigned() && !seed.is_number_integer()) throw FormatError("'seed' must be an integer", 0);
    o.seed = seed.get<std::uint64_t>();
    overlay(j, "train_weights", o.train_weights);
    overlay(j, "train_params", o.train_params);
    overlay(j, "threads", o.threads);
    overlay(j, "weight_init_scale", o.weight_init_scale);
    overlay(j, "grad_check", o.grad_check);
    return o;
}

json to_json(const LossConfig& l) {
    return {{"dice_weight", l.dice_weight},
            {"bce_weight", l.bce_weight},
            {"soft_temp", l.soft_temp},
            {"eps", l.eps},
            {"all_followups", l.all_followups}};
}

LossConfig loss_config_from_json(const json& j) {
    LossConfig l;
    l.dice_weight = get_number(j, "dice_weight");
    l.bce_weight = get_number(j, "bce_weight");
    l.soft_temp = get_number(j, "soft_temp");
    l.eps = get_number(j, "eps");
    overlay(j, "all_followups", l.all_followups);
    return l;
}

json to_json(const RolloutConfig& c) {
    json j = {{"steps_per_day", c.steps_per_day},
              {"assimilation_alpha", c.assimilation_alpha},
              {"threshold_tau", c.threshold_tau},
              {"obs_density_level", c.obs_density_level},
              {"cg_tol", c.cg.tol},
              {"cg_max_iter", c.cg.max_iter},
              {"treatment_enabled", c.treatment_enabled}};
    j["kill_mode"] = c.kill_mode ? json(std::string(to_string(*c.kill_mode))) : json(nullptr);
    j["surgery_mode"] = c.surgery_mode ? json(std::string(to_string(*c.surgery_mode))) : json(nullptr);
    return j;
}

RolloutConfig rollout_config_from_json(const json& j, RolloutConfig base) {
    if (!j.is_object()) throw ValidationError("config overrides must be an object", "config");
    overlay(j, "steps_per_day", base.steps_per_day);
    overlay(j, "assimilation_alpha", base.assimilation_alpha);
    overlay(j, "threshold_tau", base.threshold_tau);
    overlay(j, "obs_density_level", base.obs_density_level);
    overlay(j, "cg_tol", base.cg.tol);
    overlay(j, "cg_max_iter", base.cg.max_iter);
    overlay(j, "treatment_enabled", base.treatment_enabled);
    if (const auto it = j.find("kill_mode"); it != j.end()) {
        if (it->is_null()) {
            base.kill_mode.reset();
        } else if (it->is_string()) {
            base.kill_mode = parse_kill_mode(it->get<std::string>());
        } else {
            throw ValidationError("kill_mode must be a string", "kill_mode");
        }
    }
    if (const auto it = j.find("surgery_mode"); it != j.end()) {
        if (it->is_null()) {
            base.surgery_mode.reset();
        } else if (it->is_string()) {
            base.surgery_mode = parse_surgery_mode(it->get<std::string>());
        } else {
            throw ValidationError("surgery_mode must be a string", "surgery_mode");
        }
    }
    return base;
}

json parse(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed JSON: ") + e.what(), e.byte);
    }
}

}  // namespace soctwin::codec
