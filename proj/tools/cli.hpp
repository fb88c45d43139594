#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "soctwin/calibrate.hpp"
#include "soctwin/error.hpp"
#include "soctwin/patient.hpp"

namespace soctwin::cli {

// Process exit codes, one per error kind.
enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kValidation = 3,
    kConfig = 4,
    kFormat = 5,
    kIo = 6,
    kSolver = 7,
    kDivergence = 8,
    kShape = 9,
    kState = 10,
};

int exit_code(ErrorKind kind) noexcept;

/// Runs one invocation (args exclude the program name). Human output goes to
/// `out`; failures print a single JSON line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct PatientEval {
    std::string id;
    double dsc = 0.0;                  // final observation, tau threshold
    double horizon = 0.0;              // last observation day
    std::optional<double> pred_ttp;    // censored at horizon when absent
    std::optional<double> true_ttp;    // needs stored ground truth
    bool has_truth = false;
};

/// Rolls the patient out with modulate(covariates, weights, params) and scores
/// the final prediction plus the time to progression within the observed span.
PatientEval evaluate_patient(const PatientRecord& patient, const BioParams& params,
                             const ModulatorWeights& weights, const RolloutConfig& cfg);

}  // namespace soctwin::cli
