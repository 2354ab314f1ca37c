#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "evsae/ranking.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Rollout-level success prediction: mean-pooled per-timestep SAE codes (and
// control feature sets) feed an L2-regularized logistic probe evaluated with
// stratified cross-validation.
// ---------------------------------------------------------------------------

struct LogisticConfig {
    int iterations = 500;
    double learning_rate = 0.1;
    double l2_strength = 1.0;
};

struct ProbeResult {
    std::map<std::string, double> balanced_accuracy;  // condition -> accuracy
    int folds = 5;
    uint64_t seed = 0;
};

// Stratified k-fold balanced accuracy of a logistic probe on (X, y).
// Deterministic: fold assignment, initialization and optimization are all
// fixed by `seed` and the config.
double balanced_accuracy_cv(const Eigen::MatrixXd& X, const std::vector<int>& y, int folds,
                            uint64_t seed, const LogisticConfig& config = {});

// Four conditions: mean-pooled SAE codes, mean-pooled raw hidden states,
// task-identity one-hots, and SAE codes against seeded label shuffles.
ProbeResult success_probe(const RolloutSet& set, const SaeParams& params, int layer, int folds,
                          uint64_t seed, const LogisticConfig& config = {});

}  // namespace evsae
