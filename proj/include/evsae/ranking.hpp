#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evsae/events.hpp"
#include "evsae/sae.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Feature ranking: every alive SAE feature is scored against the retained
// event clusters. Event-aligned scores project mean-subtracted activation
// windows onto pulse/step templates; window-mean drops the temporal shape;
// task-mean ignores events entirely; random-alive is the control.
// ---------------------------------------------------------------------------

inline constexpr int kDefaultWindowRadius = 5;

enum class TemplateKind { kPulse, kUp, kDown };

struct Template {
    TemplateKind kind;
    int w = 0;
    Eigen::VectorXd values;  // length 2w+1, mean-centered, unit l2 norm
};

// pulse(delta) = 1 - |delta|/(w+1); up = -1 for delta<0 else +1; down = -up.
// All three are centered and normalized afterwards.
std::array<Template, 3> make_templates(int w);

// s = max(sum_delta (z_delta - zbar) q(delta), 0)
double per_event_score(const Eigen::VectorXd& trace, const Template& tmpl);

// Inference-mode SAE codes for every rollout at `layer`.
struct SuiteCodes {
    std::map<std::string, Eigen::MatrixXd> by_episode;  // episode_id -> T x m
    int64_t m = 0;
};

SuiteCodes compute_suite_codes(const SaeParams& params, const RolloutSet& set, int layer,
                               EncodeMode mode = EncodeMode::kInferenceThreshold);

struct ScoreMatrix {
    Eigen::MatrixXd A;  // |R| x m, entries >= 0
    std::vector<std::string> cluster_ids;
    int64_t m = 0;
};

enum class RankStrategy { kEventAligned, kWindowMean, kTaskMean, kRandomAlive };

std::string strategy_name(RankStrategy s);

struct RankingResult {
    RankStrategy strategy;
    std::optional<Eigen::VectorXd> scores;  // absent for random_alive
    std::vector<int64_t> top_k;
    std::optional<uint64_t> seed;
};

// Cluster-level template-matched scores and their uniform cluster average.
std::pair<ScoreMatrix, Eigen::VectorXd> event_aligned(const SuiteCodes& codes,
                                                      const std::vector<EventCluster>& clusters,
                                                      int w);

// Episode-balanced plain window means, aggregated with event-count weights.
std::pair<ScoreMatrix, Eigen::VectorXd> window_mean(const SuiteCodes& codes,
                                                    const std::vector<EventCluster>& clusters,
                                                    int w);

// Mean activation over every (rollout, timestep) pair.
Eigen::VectorXd task_mean(const SuiteCodes& codes);

// Features active (> 0) on at least one row of the suite.
std::vector<int64_t> alive_features(const SuiteCodes& codes);

// Argmax-K with ties broken toward lower feature index.
std::vector<int64_t> top_k_of(const Eigen::VectorXd& scores, int64_t K);

// K distinct features drawn uniformly from alive \ excluded.
std::vector<int64_t> random_alive(const std::vector<int64_t>& alive,
                                  const std::vector<int64_t>& excluded, int64_t K, uint64_t seed);

double top_k_overlap(const RankingResult& a, const RankingResult& b, int64_t K);

RankingResult make_ranking(RankStrategy strategy, const Eigen::VectorXd& scores, int64_t K);
RankingResult make_random_ranking(const std::vector<int64_t>& alive,
                                  const std::vector<int64_t>& excluded, int64_t K, uint64_t seed);

}  // namespace evsae
