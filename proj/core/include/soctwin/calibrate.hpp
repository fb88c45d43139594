#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "soctwin/grid.hpp"
#include "soctwin/imex.hpp"
#include "soctwin/params.hpp"
#include "soctwin/patient.hpp"
#include "soctwin/personalize.hpp"

namespace soctwin {

struct LossConfig {
    double dice_weight = 1.0;
    double bce_weight = 1.0;
    double soft_temp = 0.05;  // density units; 0.05 theta for theta = 1
    double eps = 1.0;         // Dice smoothing
    // Score every follow-up observation (before assimilation) instead of only
    // the final one.
    bool all_followups = false;

    void validate() const;
};

struct OptimConfig {
    double lr_params = 5e-2;   // on log(D, k, alpha_ct, alpha_rt, beta_rt)
    double lr_weights = 1e-2;  // on modulator weights
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    int max_iters = 200;
    std::uint64_t seed = 0;
    bool train_weights = true;
    // Per-parameter switch in (D, k, alpha_ct, alpha_rt, beta_rt) order;
    // frozen parameters keep their initial value.
    std::array<bool, 5> train_params{true, true, true, true, true};
    int threads = 1;
    // Initial weight noise (std) drawn from `seed`; 0 keeps the given weights.
    double weight_init_scale = 0.0;
    // Compare adjoint and finite differences on the first patient at the
    // initial iterate; the result lands in FitResult::grad_check_report.
    bool grad_check = false;

    void validate() const;
};

/// Gradient layout: (D, k, alpha_ct, alpha_rt, beta_rt) then flat weights.
struct Gradient {
    std::array<double, 5> params{};
    std::vector<double> weights;

    std::vector<double> flat() const;
};

struct FitResult {
    BioParams params;
    ModulatorWeights weights;
    std::vector<double> loss_history;  // mean cohort loss at every evaluated iterate
    int best_iteration = 0;            // index into loss_history of the returned iterate
    double grad_check_report = std::numeric_limits<double>::quiet_NaN();  // max relative FD deviation
};

/// sigma((N - tau theta) / soft_temp) voxelwise.
ScalarField soft_mask(const ScalarField& n, double tau, double theta, double soft_temp);

/// dice_weight (1 - soft Dice) + bce_weight mean BCE over the grid.
double loss(const ScalarField& pred, const BinaryMask& obs, const LossConfig& lc, double tau, double theta);

struct LossGradient {
    double value = 0.0;
    ScalarField d_pred;
};
LossGradient loss_with_gradient(const ScalarField& pred, const BinaryMask& obs, const LossConfig& lc, double tau,
                                double theta);

/// Per-patient objective: loss of the rollout against the target
/// observation(s). `params` are global; the patient's effective parameters are
/// modulate(covariates, weights, params).
double patient_loss(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                    const RolloutConfig& cfg, const LossConfig& lc);

struct AdjointResult {
    double loss = 0.0;
    Gradient gradient;
    bool clamp_free = true;       // no Riccati clamp fired during the forward pass
    double min_clamp_margin = 1.0;  // closest approach to theta, relative
};

/// Discrete adjoint of patient_loss through implicit diffusion, the Riccati
/// flow, treatment jumps and assimilation.
AdjointResult grad_adjoint(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                           const RolloutConfig& cfg, const LossConfig& lc);

/// Reverse sweep over an already recorded tape (rollout() run with the
/// modulated parameters). Throws StateError on an empty tape.
AdjointResult adjoint_sweep(const PatientRecord& patient, const Tape& tape, const BioParams& params,
                            const ModulatorWeights& weights, const RolloutConfig& cfg, const LossConfig& lc);

/// Central differences of patient_loss with relative step h (absolute h for
/// zero coordinates; one-sided where a nonnegative parameter would go below 0).
Gradient grad_fd(const PatientRecord& patient, const BioParams& params, const ModulatorWeights& weights,
                 const RolloutConfig& cfg, const LossConfig& lc, double h = 1e-4, bool include_weights = true);

/// Relative L2 deviation ||a - b|| / max(||b||, floor).
double relative_l2(std::span<const double> a, std::span<const double> b, double floor = 1e-300);

struct ModelState {
    BioParams params;
    ModulatorWeights weights = ModulatorWeights::zeros();
};

/// Adam on the mean cohort loss with L2 gradient clipping. Biophysical
/// parameters move in log space (theta fixed). Returns the best evaluated
/// iterate, so the final loss never exceeds the initial one.
FitResult fit(std::span<const PatientRecord> cohort, const ModelState& init, const OptimConfig& oc,
              const LossConfig& lc, const RolloutConfig& cfg);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Patient-wise K-fold partition of indices [0, cohort_size).
std::vector<Fold> kfold_split(std::size_t cohort_size, int k, std::uint64_t seed);

}  // namespace soctwin
