#pragma once

// JSON mappings shared by the store and the service. Not installed.

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "soctwin/calibrate.hpp"
#include "soctwin/imex.hpp"
#include "soctwin/params.hpp"
#include "soctwin/patient.hpp"
#include "soctwin/personalize.hpp"
#include "soctwin/therapy.hpp"

namespace soctwin::codec {

using json = nlohmann::json;

/// Required member lookup; FormatError naming the key when absent.
const json& require(const json& j, std::string_view key);
double get_number(const json& j, std::string_view key);
int get_int(const json& j, std::string_view key);
std::string get_string(const json& j, std::string_view key);

json to_json(const BioParams& p);
BioParams bio_params_from_json(const json& j);

json to_json(const Covariates& c);
Covariates covariates_from_json(const json& j);

/// Surgeries with an explicit resection field are written as the matching
/// entry of `resection_refs` (or "inline" when none is given).
json to_json(const TreatmentTimeline& tl, const std::vector<std::string>* resection_refs = nullptr);
/// Resection references are returned in `resection_refs` (empty string when
/// the surgery has none); fields are left unset.
TreatmentTimeline timeline_from_json(const json& j, std::vector<std::string>* resection_refs = nullptr);

json to_json(const ModulatorWeights& w);
ModulatorWeights weights_from_json(const json& j);

json to_json(const OptimConfig& o);
OptimConfig optim_from_json(const json& j);

json to_json(const LossConfig& l);
LossConfig loss_config_from_json(const json& j);

json to_json(const RolloutConfig& c);
/// Overlays members present in `j` onto `base`.
RolloutConfig rollout_config_from_json(const json& j, RolloutConfig base);

json parse(std::string_view text);

}  // namespace soctwin::codec
