#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evsae/common.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Rollout storage: manifest-described suites of episodes, each episode a
// directory with traj.bin and one acts_layer{L}.bin per hooked layer.
// Arrays are float32 end-to-end so persistence round-trips bit-exactly.
// ---------------------------------------------------------------------------

struct TaskInfo {
    std::string task_id;
    std::string description;
};

struct EpisodeInfo {
    std::string episode_id;
    std::string task_id;
    bool success = false;
    int64_t length_T = 0;
    std::string data_path;  // relative to the manifest directory
};

struct RolloutManifest {
    std::string suite_id;
    std::vector<TaskInfo> tasks;
    std::vector<EpisodeInfo> episodes;
};

struct Rollout {
    std::string episode_id;
    std::string task_id;
    bool success = false;
    int64_t T = 0;
    Eigen::MatrixXf ee_pos;                  // T x 3, meters
    std::optional<Eigen::MatrixXf> ee_quat;  // T x 4, unit quaternions
    Eigen::VectorXf gripper;                 // T, 0 = closed, 1 = open
    std::map<int, Eigen::MatrixXf> activations;  // layer -> T x d

    bool operator==(const Rollout& other) const;
};

struct RolloutSet {
    RolloutManifest manifest;
    std::vector<Rollout> rollouts;  // manifest order

    const Rollout& by_episode(const std::string& episode_id) const;
    int n_episodes_in_task(const std::string& task_id) const;
};

struct ActivationBatch {
    Eigen::MatrixXf data;                                   // B x d
    std::vector<std::pair<std::string, int64_t>> provenance;  // (episode_id, timestep)
};

// Manifest I/O (UTF-8 JSON)
RolloutManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const RolloutManifest& manifest, const std::filesystem::path& path);

// Episode binary I/O. `dir` is the per-episode directory; read validates
// shapes, finiteness and quaternion norms and throws the matching error.
void write_rollout(const Rollout& rollout, const std::filesystem::path& dir);
Rollout read_rollout(const std::filesystem::path& dir, const std::string& episode_id = "",
                     const std::string& task_id = "", bool success = false);

// Loads and validates the whole suite in manifest order.
RolloutSet ingest(const std::filesystem::path& manifest_path);

// One epoch of seeded batches over every (episode, timestep) row at `layer`.
// Each row appears exactly once; the final partial batch is emitted.
std::vector<ActivationBatch> activation_batches(const RolloutSet& set, int layer,
                                                int64_t batch_size, uint64_t seed);

// All rows at `layer` stacked in manifest order (episode-major, time-minor),
// with matching provenance. Backs batching, SAE training and diagnostics.
ActivationBatch stack_rows(const RolloutSet& set, int layer);

}  // namespace evsae
