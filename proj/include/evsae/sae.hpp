#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "evsae/common.hpp"
#include "evsae/rollout.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// BatchTopK sparse autoencoders. Pre-activations P = (s*H) W_enc^T + b_enc;
// the top k*B entries of P (by signed value, batch-wide) are kept and clamped
// at zero, the rest zeroed. Decoding divides the input scale back out.
// Training keeps decoder columns at unit norm and revives dead features with
// an auxiliary residual-reconstruction loss.
// ---------------------------------------------------------------------------

struct SaeParams {
    Eigen::MatrixXd W_enc;  // m x d
    Eigen::VectorXd b_enc;  // m
    Eigen::MatrixXd W_dec;  // d x m, unit-norm columns
    Eigen::VectorXd b_dec;  // d
    int64_t k = 0;          // per-example active budget
    double input_scale = 1.0;
    double theta = 0.0;     // inference threshold (EMA of the training cut)

    int64_t d() const { return W_dec.rows(); }
    int64_t m() const { return W_dec.cols(); }
};

struct SaeTrainConfig {
    int64_t m = 0;  // dictionary size (0 = 2*d)
    int64_t k = 64;
    double learning_rate = 1e-3;
    int64_t batch_size = 256;
    int64_t steps = 4000;
    int64_t warmup_steps = 1000;
    double decay_start_fraction = 0.8;
    double lambda_aux = 1.0 / 32.0;
    int64_t k_aux = 0;  // 0 = 2*k
    int64_t dead_after_steps = 200;
    uint64_t seed = 0;
};

struct SaeDiagnostics {
    double fve = 0.0;
    double alive_fraction = 0.0;
    double avg_l0 = 0.0;
};

enum class EncodeMode {
    kTrainBatchTopK,      // batch-wide top k*B (training rule)
    kInferenceThreshold,  // keep entries > theta (default at inference)
    kPerRowTopK,          // per-state top-k fallback
};

struct TopKResult {
    Eigen::MatrixXd Z;                      // clamped sparse code
    std::vector<std::pair<int64_t, int64_t>> kept;  // (row, col) of selected entries
    double min_kept_preact = 0.0;           // the batch cut (pre-clamp)
};

// Keeps the top k*B entries of P by signed value; ties at the cut break by
// (lower feature index, lower row index). Kept negatives clamp to zero.
TopKResult batch_topk(const Eigen::MatrixXd& P, int64_t k);

// Scaled-space pre-activations for raw rows H (N x d).
Eigen::MatrixXd preactivations(const SaeParams& params, const Eigen::MatrixXd& H);

// Codes for raw rows under the given mode; decode maps codes back to raw space.
Eigen::MatrixXd encode_rows(const SaeParams& params, const Eigen::MatrixXd& H, EncodeMode mode);
Eigen::MatrixXd decode_rows(const SaeParams& params, const Eigen::MatrixXd& Z);

// (Z, H_hat) for raw rows H; H_hat is in raw space.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sae_forward(const SaeParams& params,
                                                        const Eigen::MatrixXd& H,
                                                        EncodeMode mode = EncodeMode::kTrainBatchTopK);

// Single-state encode for hooks (per-row modes only).
Eigen::VectorXd encode_state(const SaeParams& params, const Eigen::VectorXd& x, EncodeMode mode);

struct SaeLossParts {
    double total = 0.0;
    double mse = 0.0;
    double aux = 0.0;
};

struct SaeSupports {
    std::vector<std::pair<int64_t, int64_t>> kept;      // main top-k selection
    std::vector<std::pair<int64_t, int64_t>> kept_aux;  // per-row aux selection over dead features
};

struct SaeGradients {
    Eigen::MatrixXd dW_enc;
    Eigen::VectorXd db_enc;
    Eigen::MatrixXd dW_dec;
    Eigen::VectorXd db_dec;
};

// Loss on raw rows H: mse is the per-example mean squared reconstruction
// error in scaled space; aux reconstructs the residual from the top-k_aux
// pre-activations among dead features (0 when none are dead).
SaeLossParts sae_loss(const SaeParams& params, const Eigen::MatrixXd& H,
                      const std::vector<bool>& dead_mask, double lambda_aux, int64_t k_aux,
                      SaeSupports* supports_out = nullptr);

// Same loss with the sparsity supports frozen; this is the function finite
// differences see, so the gradient check is well-posed.
SaeLossParts sae_loss_with_support(const SaeParams& params, const Eigen::MatrixXd& H,
                                   const SaeSupports& supports, double lambda_aux);

SaeGradients sae_loss_gradients(const SaeParams& params, const Eigen::MatrixXd& H,
                                const SaeSupports& supports, double lambda_aux);

struct TrainStepStats {
    int64_t step = 0;
    double mse = 0.0;
    double aux = 0.0;
    double l0 = 0.0;
    int64_t dead_count = 0;
};

struct TrainResult {
    SaeParams params;
    std::vector<TrainStepStats> history;
    bool diverged = false;
};

// Deterministic Adam training over seeded epoch permutations of `rows`
// (raw activation rows, N x d). Aborts at the last good checkpoint if the
// loss goes non-finite.
TrainResult train_sae(const SaeTrainConfig& config, const Eigen::MatrixXf& rows);

TrainResult train_sae_on_set(const SaeTrainConfig& config, const RolloutSet& set, int layer);

// FVE / alive fraction / mean L0 over every row of the suite at `layer`,
// using inference-mode codes.
SaeDiagnostics diagnostics(const SaeParams& params, const RolloutSet& set, int layer,
                           EncodeMode mode = EncodeMode::kInferenceThreshold);

SaeDiagnostics diagnostics_on_rows(const SaeParams& params, const Eigen::MatrixXf& rows,
                                   EncodeMode mode = EncodeMode::kInferenceThreshold);

// Checkpoint I/O (header + weight tensors in the rollout_store convention).
void save_sae(const SaeParams& params, const std::filesystem::path& path);
SaeParams load_sae(const std::filesystem::path& path);

}  // namespace evsae
