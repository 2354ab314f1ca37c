#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evsae/common.hpp"
#include "evsae/rollout.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// A deterministic kinematic pick-and-place world. Hidden states are generated
// from planted sparse latents: event latents carry localized pulse/gate time
// courses anchored at scripted event timesteps (and hold the action commands),
// tonic latents are near-constant, noise latents fire sparsely at random.
// Actions are a fixed linear readout of the (hookable) hidden state,
// integrated by the world, so edits to the state causally change behavior.
// ---------------------------------------------------------------------------

inline constexpr int kEarlyLayer = 0;  // pre-mixing state
inline constexpr int kLateLayer = 1;   // post-mixing by a fixed rotation

inline const std::vector<std::string> kEventTypes = {
    "approach_start", "grasp_close", "transport_start", "release_open", "withdraw"};

struct WorldConfig {
    uint64_t seed = 1;
    int n_tasks = 2;
    int episodes_per_task = 10;
    int64_t T_max = 120;
    int64_t d = 48;
    int64_t n_event_features = 11;
    int64_t n_tonic_features = 3;
    int64_t n_noise_features = 18;
    double noise_sigma = 0.02;     // fraction of signal RMS
    double causal_gain = 1.0;      // scales event-latent contribution to actions
    double success_radius = 0.08;  // meters
    // artifact knobs beyond the core surface
    double grasp_failure_rate = 0.0;   // fraction of episodes with a weak grasp pulse
    bool task_private_features = false;  // disjoint event latents per task

    int64_t m_true() const { return n_event_features * (task_private_features ? n_tasks : 1) +
                                    n_tonic_features + n_noise_features; }
};

struct PlantedEvent {
    std::string event_type;
    int64_t latent;      // index into [0, m_true)
    int task = -1;       // owning task when features are private, else -1
    bool actuates = false;  // carries action content (vs a pure marker pulse)
};

struct GroundTruth {
    Eigen::MatrixXd D_true;                       // d x m_true generative decoder
    std::map<int, Eigen::MatrixXd> planted_directions;  // layer -> d x m_true
    Eigen::MatrixXd readout;                      // 4 x d, rows (dx, dy, dz, dgrip), late space
    std::map<std::string, std::vector<int64_t>> event_feature_map;
    std::vector<PlantedEvent> planted_events;
    std::vector<int64_t> event_indices;
    std::vector<int64_t> tonic_indices;
    std::vector<int64_t> noise_indices;
};

struct TaskSpec {
    std::string task_id;
    std::string description;
    Eigen::Vector3d source;
    Eigen::Vector3d target;
};

struct World {
    WorldConfig config;
    GroundTruth truth;
    std::vector<TaskSpec> tasks;
    Eigen::MatrixXd rotation;      // d x d orthogonal, late = rotation * early
    Eigen::MatrixXd decode_early;  // m_true x d left inverse of D_true
    double noise_stddev = 0.0;     // absolute, derived from noise_sigma * signal RMS
    Eigen::Vector3d home;
};

struct StateHook {
    int layer = kLateLayer;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn;
};

struct EpisodeResult {
    Rollout rollout;               // activations at layers 0 and 1
    bool success = false;
    std::vector<std::pair<std::string, int64_t>> events;  // scripted (type, timestep)
    Eigen::MatrixXf obj_pos;       // T x 3
    Eigen::Vector3f source_pos;
    Eigen::Vector3f target_pos;
};

std::pair<World, GroundTruth> gen_world(const WorldConfig& config);

EpisodeResult run_episode(const World& world, int task_idx, const StateHook* hook,
                          uint64_t episode_seed);

// Episode i runs task i % n_tasks with seed `seed + i`; intervention campaigns
// reuse the same schedule for paired comparison.
double baseline_sr(const World& world, int n_episodes, uint64_t seed);

std::vector<EpisodeResult> run_episodes(const World& world, int n_episodes, uint64_t seed,
                                        const StateHook* hook = nullptr);

// Fraction of the ranking's top-K features whose decoder column best-matches
// (|cos| >= 0.5) a planted event latent at `layer`.
struct SaeParams;  // fwd
double oracle_precision(const std::vector<int64_t>& top_features, const GroundTruth& truth,
                        const Eigen::MatrixXd& sae_decoder, int layer);

// Fixed scene featurizer: relative object/gripper/target geometry mapped
// through a frozen random projection. World-independent by construction.
Eigen::VectorXd scene_feature(const Eigen::Vector3d& ee_pos, const Eigen::Vector3d& obj_pos,
                              const Eigen::Vector3d& target_pos, double gripper);

inline constexpr int kSceneFeatureDim = 16;

}  // namespace evsae
