#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "evsae/rollout.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Kinematic keyframes: minimal waypoint subsequences of the end-effector
// position trajectory under a max-deviation budget eta, plus the observation
// bundle packaged around each waypoint.
// ---------------------------------------------------------------------------

inline constexpr double kDefaultAweEta = 0.05;  // meters
inline constexpr int kBundleOffsets[5] = {-4, -2, 0, 2, 4};

struct Keyframe {
    std::string episode_id;
    std::string task_id;
    int64_t t_i = 0;
    int waypoint_rank = 0;  // position in the episode's ordered waypoint list
};

struct KeyframeBundle {
    Keyframe keyframe;
    std::vector<int64_t> frame_offsets;  // clipped to [0, T-1], deduplicated, sorted
    bool offsets_clipped = false;
    Eigen::Vector3f ee_pos;
    Eigen::Vector4f ee_quat;  // identity when the rollout has no quaternions
    float gripper = 0.0f;
    double progress = 0.0;  // t_i / (T-1)
    std::string task_description;
    int episode_index = 0;
    bool success = false;
};

// Max Euclidean deviation between traj[t], t in [i, j], and the chord from
// traj[i] to traj[j] evaluated at parameter (t-i)/(j-i).
double segment_error(const Eigen::MatrixXf& traj, int64_t i, int64_t j);

// Minimal ordered waypoint set containing both endpoints such that every
// consecutive segment stays within eta; among minimal sets, returns the
// lexicographically smallest index sequence. Exact DP over the feasibility
// DAG, no greedy approximation.
std::vector<int64_t> awe_extract(const Eigen::MatrixXf& traj, double eta);

std::vector<KeyframeBundle> make_bundles(const Rollout& rollout,
                                         const std::vector<int64_t>& waypoints,
                                         const std::string& task_description,
                                         int episode_index);

// Convenience: AWE + bundles over a whole suite, episode order preserved.
std::vector<KeyframeBundle> extract_suite_keyframes(const RolloutSet& set, double eta);

}  // namespace evsae
