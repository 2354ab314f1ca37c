#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "evsae/sae.hpp"
#include "evsae/synthworld.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Interventions on hidden states: the reconstruction-only fidelity hook,
// residual-preserving latent edits z'_i = alpha z_i (i in S), decoder-vector
// steering, and the closed-loop campaigns that measure their effect on SR.
// ---------------------------------------------------------------------------

enum class InterventionMode { kLatentScale, kReconOnly, kDecoderAdd, kJointDropout };

std::string intervention_mode_name(InterventionMode mode);

struct InterventionSpec {
    InterventionMode mode = InterventionMode::kLatentScale;
    int layer = kLateLayer;
    std::vector<int64_t> features;  // S
    double alpha = 0.0;
    int episodes_per_condition = 100;
    uint64_t seed = 0;
    EncodeMode encode = EncodeMode::kInferenceThreshold;  // per-state top-k via flag
};

struct EditDiagnostics {
    double rel_update = 0.0;  // ||alpha d_i|| / ||x||
    double c_before = 0.0;    // cos(x, d_i)
    double c_after = 0.0;     // cos(x', d_i)
    double norm_x = 0.0;
    double norm_x_prime = 0.0;
};

struct InterventionOutcome {
    double sr = 0.0;
    double delta_sr = 0.0;  // percentage points vs baseline
    std::vector<bool> per_episode;
    std::optional<EditDiagnostics> diagnostics;
    std::optional<int64_t> feature;
};

struct CampaignResult {
    std::vector<InterventionOutcome> per_feature;
    InterventionOutcome mean;  // per_episode empty; sr averaged across features
};

struct DoseResponseCurve {
    std::vector<double> alphas;       // strictly increasing, includes 0 and 1
    std::vector<double> sr_at_alpha;
    int layer = kLateLayer;
    std::string ranking_label;
};

// x' = x + W_dec[:, S] ((alpha - 1) z_S) / input_scale: only the SAE-explained
// component moves, the reconstruction error is untouched, and alpha = 1
// returns x bitwise.
Eigen::VectorXd latent_edit(const SaeParams& params, const Eigen::VectorXd& x,
                            const std::vector<int64_t>& S, double alpha,
                            EncodeMode mode = EncodeMode::kInferenceThreshold);

// x' = Dec(Enc(x)); SR measured under this hook is the fidelity metric.
Eigen::VectorXd recon_hook(const SaeParams& params, const Eigen::VectorXd& x,
                           EncodeMode mode = EncodeMode::kInferenceThreshold);

// x' = x + alpha d_i with perturbation-scale diagnostics.
std::pair<Eigen::VectorXd, EditDiagnostics> decoder_add(const SaeParams& params,
                                                        const Eigen::VectorXd& x, int64_t i,
                                                        double alpha);

// Matched-norm random-direction control: same ||update|| as decoder_add.
std::pair<Eigen::VectorXd, EditDiagnostics> decoder_add_random_control(const SaeParams& params,
                                                                       const Eigen::VectorXd& x,
                                                                       int64_t i, double alpha,
                                                                       uint64_t seed);

// Hook wrapping one edit condition at spec.layer.
StateHook make_hook(const SaeParams& params, const InterventionSpec& spec,
                    const std::vector<int64_t>& features);

// Runs the spec against the world. Per-feature modes run each feature of S
// separately and also report the across-feature mean; recon_only and
// joint_dropout produce a single condition.
CampaignResult run_intervention(const World& world, const SaeParams& params,
                                const InterventionSpec& spec, double baseline);

// One run_intervention per grid point, shared episode seeds across points.
DoseResponseCurve alpha_sweep(const World& world, const SaeParams& params,
                              const InterventionSpec& base_spec,
                              const std::vector<double>& alpha_grid, double baseline,
                              const std::string& ranking_label);

struct JointDropoutResult {
    std::vector<InterventionOutcome> per_seed;
    double mean_sr = 0.0;
    double std_sr = 0.0;
};

// For each seed: sample n_features alive features, zero them jointly.
JointDropoutResult joint_dropout(const World& world, const SaeParams& params, int layer,
                                 int64_t n_features, const std::vector<int64_t>& alive,
                                 const std::vector<uint64_t>& seeds, int episodes_per_condition,
                                 uint64_t episode_seed, double baseline);

// Spearman rank correlation with average ranks on ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace evsae
