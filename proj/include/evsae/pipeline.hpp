#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evsae/events.hpp"
#include "evsae/intervention.hpp"
#include "evsae/keyframes.hpp"
#include "evsae/probe.hpp"
#include "evsae/ranking.hpp"
#include "evsae/reports.hpp"
#include "evsae/synthworld.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Pipeline plumbing shared by the CLI verbs and the integration tests: suite
// directories on disk, config files, CSV exports and the experiment probes.
// ---------------------------------------------------------------------------

inline constexpr const char* kToolVersion = "0.1.0";

// WorldConfig <-> JSON
WorldConfig read_world_config(const std::filesystem::path& path);
void write_world_config(const WorldConfig& config, const std::filesystem::path& path);

// SaeTrainConfig <-> JSON (partial configs override defaults)
SaeTrainConfig read_sae_config(const std::filesystem::path& path);

// Writes manifest.json, world.json, events.csv, ground_truth.json and one
// directory per episode (traj.bin, acts_layer{0,1}.bin, scene.bin).
std::vector<std::filesystem::path> write_suite(const World& world,
                                               const std::filesystem::path& out_dir);

RolloutSet load_suite(const std::filesystem::path& suite_dir);

// events.csv: episode_id,event_type,timestep
using EventLog = std::map<std::string, std::vector<std::pair<std::string, int64_t>>>;
EventLog read_event_log(const std::filesystem::path& path);

// nearest scripted event type for a keyframe (empty when unknown episode)
EventHintFn hint_from_event_log(const EventLog& log);

// visual embeddings per bundle: "synth" uses the scene featurizer over
// scene.bin, "none" yields zero vectors, "file:<path>" reads a tensor file
// with one record per episode named by episode id (rows indexed by timestep).
std::vector<Eigen::VectorXd> visual_embeddings(const std::filesystem::path& suite_dir,
                                               const RolloutSet& set,
                                               const std::vector<KeyframeBundle>& bundles,
                                               const std::string& source);

void write_keyframes_csv(const std::vector<KeyframeBundle>& bundles,
                         const std::filesystem::path& path);

void write_clusters_csv(const std::vector<EventCluster>& clusters,
                        const std::filesystem::path& path);
void write_cluster_members_csv(const std::vector<EventCluster>& clusters,
                               const std::filesystem::path& path);
std::vector<EventCluster> read_clusters(const std::filesystem::path& clusters_csv,
                                        const std::filesystem::path& members_csv);

struct RankingSet {
    ScoreMatrix event_matrix;
    std::map<std::string, RankingResult> by_strategy;  // keyed by strategy_name
    std::vector<int64_t> alive;
};

// All four strategies; random_alive excludes the informed top-K picks.
RankingSet compute_all_rankings(const SuiteCodes& codes, const std::vector<EventCluster>& clusters,
                                int w, int64_t K, uint64_t seed);

void write_rankings_csv(const RankingSet& rankings, const std::filesystem::path& path);
void write_score_matrix_csv(const ScoreMatrix& matrix,
                            const std::vector<EventCluster>& clusters,
                            const std::filesystem::path& path);
void write_overlaps_csv(const RankingSet& rankings, int64_t K, const std::filesystem::path& path);

// Campaign spec file: {"cells": [{mode, layer, ranking, features, alpha,
// episodes, seed}, ...]}
struct CampaignCell {
    InterventionSpec spec;
    std::string ranking_label;
};
std::vector<CampaignCell> read_campaign(const std::filesystem::path& path);
void write_campaign_results_csv(const std::vector<CampaignRow>& rows,
                                const std::filesystem::path& path);

struct TargetOffTargetRow {
    std::string scope;  // task id or "all"
    int n_clusters = 0;
    double target_sr = 0.0;
    double offtarget_sr = 0.0;
};

// Up to 3 clusters per task; each cluster's highest event-aligned feature is
// zeroed on its own task and on one random other task, `trials` rollouts each.
std::vector<TargetOffTargetRow> target_offtarget(const World& world, const SaeParams& params,
                                                 const std::vector<EventCluster>& clusters,
                                                 const ScoreMatrix& event_matrix, int layer,
                                                 int trials, uint64_t seed);

void write_probe_csv(const ProbeResult& result, const std::filesystem::path& path);

// Provenance record: config hash, seed, version and produced files. No
// timestamps, so bytes are stable across runs.
void write_run_record(const std::filesystem::path& out_dir, const std::string& verb,
                      uint64_t seed, const std::string& config_text,
                      const std::vector<std::filesystem::path>& outputs);

uint64_t fnv1a_hash(const std::string& data);

}  // namespace evsae
