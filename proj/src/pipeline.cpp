#include "evsae/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evsae/tensor_io.hpp"

namespace evsae {

using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

uint64_t fnv1a_hash(const std::string& data) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

WorldConfig read_world_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw InvalidConfig("world config parse error: " + std::string(e.what()));
    }
    WorldConfig c;
    c.seed = j.value("seed", c.seed);
    c.n_tasks = j.value("n_tasks", c.n_tasks);
    c.episodes_per_task = j.value("episodes_per_task", c.episodes_per_task);
    c.T_max = j.value("T_max", c.T_max);
    c.d = j.value("d", c.d);
    c.n_event_features = j.value("n_event_features", c.n_event_features);
    c.n_tonic_features = j.value("n_tonic_features", c.n_tonic_features);
    c.n_noise_features = j.value("n_noise_features", c.n_noise_features);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.causal_gain = j.value("causal_gain", c.causal_gain);
    c.success_radius = j.value("success_radius", c.success_radius);
    c.grasp_failure_rate = j.value("grasp_failure_rate", c.grasp_failure_rate);
    c.task_private_features = j.value("task_private_features", c.task_private_features);
    return c;
}

void write_world_config(const WorldConfig& c, const std::filesystem::path& path) {
    json j;
    j["seed"] = c.seed;
    j["n_tasks"] = c.n_tasks;
    j["episodes_per_task"] = c.episodes_per_task;
    j["T_max"] = c.T_max;
    j["d"] = c.d;
    j["n_event_features"] = c.n_event_features;
    j["n_tonic_features"] = c.n_tonic_features;
    j["n_noise_features"] = c.n_noise_features;
    j["noise_sigma"] = c.noise_sigma;
    j["causal_gain"] = c.causal_gain;
    j["success_radius"] = c.success_radius;
    j["grasp_failure_rate"] = c.grasp_failure_rate;
    j["task_private_features"] = c.task_private_features;
    write_text(path, j.dump(2) + "\n");
}

SaeTrainConfig read_sae_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw InvalidConfig("sae config parse error: " + std::string(e.what()));
    }
    SaeTrainConfig c;
    c.m = j.value("m", c.m);
    c.k = j.value("k", c.k);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.decay_start_fraction = j.value("decay_start_fraction", c.decay_start_fraction);
    c.lambda_aux = j.value("lambda_aux", c.lambda_aux);
    c.k_aux = j.value("k_aux", c.k_aux);
    c.dead_after_steps = j.value("dead_after_steps", c.dead_after_steps);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<std::filesystem::path> write_suite(const World& world,
                                               const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> outputs;
    const WorldConfig& cfg = world.config;

    RolloutManifest manifest;
    manifest.suite_id = "synthworld_seed" + std::to_string(cfg.seed);
    for (const auto& t : world.tasks) manifest.tasks.push_back({t.task_id, t.description});

    std::string events_csv = "episode_id,event_type,timestep\n";
    const int n_episodes = cfg.n_tasks * cfg.episodes_per_task;
    for (int i = 0; i < n_episodes; ++i) {
        const int task = i % cfg.n_tasks;
        const uint64_t ep_seed = cfg.seed * 1000 + static_cast<uint64_t>(i);
        EpisodeResult result = run_episode(world, task, nullptr, ep_seed);

        const std::string ep_dir_name = "ep" + format("%04d", i);
        result.rollout.episode_id = ep_dir_name;
        write_rollout(result.rollout, out_dir / ep_dir_name);

        // scene log for the visual featurizer
        TensorRecord obj;
        obj.dims = {static_cast<uint64_t>(result.obj_pos.rows()), 3};
        obj.data.resize(static_cast<size_t>(result.obj_pos.size()));
        for (Eigen::Index r = 0; r < result.obj_pos.rows(); ++r)
            for (Eigen::Index c = 0; c < 3; ++c)
                obj.data[static_cast<size_t>(r * 3 + c)] = result.obj_pos(r, c);
        write_tensor_file(out_dir / ep_dir_name / "scene.bin",
                          {{"obj_pos", obj},
                           {"target_pos", to_record(Eigen::VectorXf(result.target_pos))},
                           {"source_pos", to_record(Eigen::VectorXf(result.source_pos))}});

        manifest.episodes.push_back({ep_dir_name, world.tasks[static_cast<size_t>(task)].task_id,
                                     result.success, result.rollout.T, ep_dir_name});
        for (const auto& [type, t] : result.events)
            events_csv += ep_dir_name + "," + type + "," + std::to_string(t) + "\n";
    }

    write_manifest(manifest, out_dir / "manifest.json");
    outputs.push_back(out_dir / "manifest.json");
    write_text(out_dir / "events.csv", events_csv);
    outputs.push_back(out_dir / "events.csv");
    write_world_config(cfg, out_dir / "world.json");
    outputs.push_back(out_dir / "world.json");

    // ground truth: planted directions per layer plus index sets
    write_tensor_file(out_dir / "ground_truth.bin",
                      {{"D_true", to_record(Eigen::MatrixXf(world.truth.D_true.cast<float>()))},
                       {"planted_late", to_record(Eigen::MatrixXf(
                                            world.truth.planted_directions.at(kLateLayer).cast<float>()))},
                       {"readout", to_record(Eigen::MatrixXf(world.truth.readout.cast<float>()))}});
    outputs.push_back(out_dir / "ground_truth.bin");

    json gt;
    gt["event_indices"] = world.truth.event_indices;
    gt["tonic_indices"] = world.truth.tonic_indices;
    gt["noise_indices"] = world.truth.noise_indices;
    gt["event_feature_map"] = json::object();
    for (const auto& [key, ids] : world.truth.event_feature_map) gt["event_feature_map"][key] = ids;
    write_text(out_dir / "ground_truth.json", gt.dump(2) + "\n");
    outputs.push_back(out_dir / "ground_truth.json");
    return outputs;
}

RolloutSet load_suite(const std::filesystem::path& suite_dir) {
    return ingest(suite_dir / "manifest.json");
}

EventLog read_event_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("missing event log: " + path.string());
    EventLog log;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) throw IoError("malformed event log line: " + line);
        log[fields[0]].emplace_back(fields[1], std::stoll(fields[2]));
    }
    return log;
}

EventHintFn hint_from_event_log(const EventLog& log) {
    return [log](const Keyframe& kf) -> std::string {
        auto it = log.find(kf.episode_id);
        if (it == log.end() || it->second.empty()) return "";
        std::string best;
        int64_t best_dist = std::numeric_limits<int64_t>::max();
        for (const auto& [type, t] : it->second) {
            const int64_t d = std::abs(t - kf.t_i);
            if (d < best_dist) {
                best_dist = d;
                best = type;
            }
        }
        return best;
    };
}

std::vector<Eigen::VectorXd> visual_embeddings(const std::filesystem::path& suite_dir,
                                               const RolloutSet& set,
                                               const std::vector<KeyframeBundle>& bundles,
                                               const std::string& source) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(bundles.size());

    if (source == "none") {
        for (size_t i = 0; i < bundles.size(); ++i)
            out.push_back(Eigen::VectorXd::Zero(kSceneFeatureDim));
        return out;
    }

    if (source == "synth") {
        std::map<std::string, std::pair<Eigen::MatrixXf, Eigen::Vector3f>> scenes;
        for (const auto& info : set.manifest.episodes) {
            TensorFile f = read_tensor_file(suite_dir / info.data_path / "scene.bin");
            scenes[info.episode_id] = {record_to_matrix(f.at("obj_pos")),
                                       Eigen::Vector3f(record_to_vector(f.at("target_pos")))};
        }
        for (const auto& b : bundles) {
            const auto& [obj_pos, target] = scenes.at(b.keyframe.episode_id);
            out.push_back(scene_feature(b.ee_pos.cast<double>(),
                                        obj_pos.row(b.keyframe.t_i).cast<double>().transpose(),
                                        target.cast<double>(), b.gripper));
        }
        return out;
    }

    if (source.rfind("file:", 0) == 0) {
        TensorFile f = read_tensor_file(source.substr(5));
        for (const auto& b : bundles) {
            auto it = f.find(b.keyframe.episode_id);
            if (it == f.end())
                throw MissingFile("no precomputed embedding record for episode " +
                                  b.keyframe.episode_id);
            const Eigen::MatrixXf m = record_to_matrix(it->second);
            if (b.keyframe.t_i >= m.rows())
                throw ShapeMismatch("embedding record too short for episode " +
                                    b.keyframe.episode_id);
            out.push_back(m.row(b.keyframe.t_i).cast<double>().transpose());
        }
        return out;
    }

    throw InvalidConfig("unknown visual embedding source: " + source);
}

void write_keyframes_csv(const std::vector<KeyframeBundle>& bundles,
                         const std::filesystem::path& path) {
    std::string csv = "task_id,episode_id,t_i,waypoint_rank,progress,success\n";
    for (const auto& b : bundles)
        csv += b.keyframe.task_id + "," + b.keyframe.episode_id + "," +
               std::to_string(b.keyframe.t_i) + "," + std::to_string(b.keyframe.waypoint_rank) +
               format(",%.6f,%d\n", b.progress, b.success ? 1 : 0);
    write_text(path, csv);
}

void write_clusters_csv(const std::vector<EventCluster>& clusters,
                        const std::filesystem::path& path) {
    std::string csv = "cluster_id,task_id,size,coverage,phrase,phase\n";
    for (const auto& c : clusters)
        csv += c.cluster_id + "," + c.task_id + "," + std::to_string(c.size()) +
               format(",%.4f,", c.coverage) + c.phrase.value_or("") + "," + c.phase.value_or("") +
               "\n";
    write_text(path, csv);
}

void write_cluster_members_csv(const std::vector<EventCluster>& clusters,
                               const std::filesystem::path& path) {
    std::string csv = "cluster_id,task_id,episode_id,t_i,waypoint_rank\n";
    for (const auto& c : clusters)
        for (const auto& kf : c.members)
            csv += c.cluster_id + "," + c.task_id + "," + kf.episode_id + "," +
                   std::to_string(kf.t_i) + "," + std::to_string(kf.waypoint_rank) + "\n";
    write_text(path, csv);
}

std::vector<EventCluster> read_clusters(const std::filesystem::path& clusters_csv,
                                        const std::filesystem::path& members_csv) {
    std::map<std::string, EventCluster> by_id;
    std::vector<std::string> order;
    {
        std::ifstream in(clusters_csv);
        if (!in) throw MissingFile("missing clusters csv: " + clusters_csv.string());
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 6) throw IoError("malformed clusters line: " + line);
            EventCluster c;
            c.cluster_id = f[0];
            c.task_id = f[1];
            c.coverage = std::stod(f[3]);
            if (!f[4].empty()) c.phrase = f[4];
            if (!f[5].empty()) c.phase = f[5];
            order.push_back(c.cluster_id);
            by_id.emplace(c.cluster_id, std::move(c));
        }
    }
    {
        std::ifstream in(members_csv);
        if (!in) throw MissingFile("missing cluster members csv: " + members_csv.string());
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 5) throw IoError("malformed member line: " + line);
            auto it = by_id.find(f[0]);
            if (it == by_id.end()) throw IoError("member references unknown cluster " + f[0]);
            Keyframe kf;
            kf.task_id = f[1];
            kf.episode_id = f[2];
            kf.t_i = std::stoll(f[3]);
            kf.waypoint_rank = std::stoi(f[4]);
            it->second.members.push_back(std::move(kf));
        }
    }
    std::vector<EventCluster> clusters;
    for (const auto& id : order) {
        if (by_id.at(id).members.empty())
            throw IoError("cluster " + id + " has no members in " + members_csv.string());
        clusters.push_back(by_id.at(id));
    }
    return clusters;
}

RankingSet compute_all_rankings(const SuiteCodes& codes, const std::vector<EventCluster>& clusters,
                                int w, int64_t K, uint64_t seed) {
    RankingSet out;
    auto [matrix, r_event] = event_aligned(codes, clusters, w);
    auto [wm_matrix, r_window] = window_mean(codes, clusters, w);
    const Eigen::VectorXd r_task = task_mean(codes);
    out.event_matrix = std::move(matrix);
    out.alive = alive_features(codes);

    out.by_strategy.emplace("event_aligned",
                            make_ranking(RankStrategy::kEventAligned, r_event, K));
    out.by_strategy.emplace("window_mean", make_ranking(RankStrategy::kWindowMean, r_window, K));
    out.by_strategy.emplace("task_mean", make_ranking(RankStrategy::kTaskMean, r_task, K));

    std::vector<int64_t> excluded;
    for (const char* name : {"event_aligned", "window_mean", "task_mean"})
        for (int64_t f : out.by_strategy.at(name).top_k) excluded.push_back(f);
    out.by_strategy.emplace("random_alive", make_random_ranking(out.alive, excluded, K, seed));
    return out;
}

void write_rankings_csv(const RankingSet& rankings, const std::filesystem::path& path) {
    std::string csv = "strategy,feature_id,score,rank\n";
    for (const char* name : {"event_aligned", "window_mean", "task_mean", "random_alive"}) {
        const RankingResult& r = rankings.by_strategy.at(name);
        int rank = 1;
        for (int64_t f : r.top_k) {
            csv += std::string(name) + "," + std::to_string(f) + ",";
            if (r.scores) csv += format("%.9f", (*r.scores)(f));
            csv += "," + std::to_string(rank++) + "\n";
        }
    }
    write_text(path, csv);
}

void write_score_matrix_csv(const ScoreMatrix& matrix,
                            const std::vector<EventCluster>& clusters,
                            const std::filesystem::path& path) {
    std::string csv = "cluster_id,task_id,phase";
    for (int64_t f = 0; f < matrix.m; ++f) csv += format(",f%lld", static_cast<long long>(f));
    csv += "\n";
    for (int64_t r = 0; r < matrix.A.rows(); ++r) {
        const auto& c = clusters.at(static_cast<size_t>(r));
        csv += matrix.cluster_ids[static_cast<size_t>(r)] + "," + c.task_id + "," +
               c.phase.value_or("");
        for (int64_t f = 0; f < matrix.m; ++f) csv += format(",%.9f", matrix.A(r, f));
        csv += "\n";
    }
    write_text(path, csv);
}

void write_overlaps_csv(const RankingSet& rankings, int64_t K, const std::filesystem::path& path) {
    std::string csv = "pair,overlap_pct\n";
    const std::vector<std::string> names = {"event_aligned", "window_mean", "task_mean",
                                            "random_alive"};
    for (size_t a = 0; a < names.size(); ++a)
        for (size_t b = a + 1; b < names.size(); ++b) {
            const double o = top_k_overlap(rankings.by_strategy.at(names[a]),
                                           rankings.by_strategy.at(names[b]), K);
            csv += names[a] + "/" + names[b] + format(",%.1f%%\n", 100.0 * o);
        }
    write_text(path, csv);
}

std::vector<CampaignCell> read_campaign(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw InvalidConfig("campaign parse error: " + std::string(e.what()));
    }
    std::vector<CampaignCell> cells;
    for (const auto& c : j.at("cells")) {
        CampaignCell cell;
        const std::string mode = c.value("mode", "latent_scale");
        if (mode == "latent_scale") cell.spec.mode = InterventionMode::kLatentScale;
        else if (mode == "recon_only") cell.spec.mode = InterventionMode::kReconOnly;
        else if (mode == "decoder_add") cell.spec.mode = InterventionMode::kDecoderAdd;
        else if (mode == "joint_dropout") cell.spec.mode = InterventionMode::kJointDropout;
        else throw InvalidConfig("unknown intervention mode: " + mode);
        cell.spec.layer = c.value("layer", kLateLayer);
        cell.spec.alpha = c.value("alpha", 0.0);
        cell.spec.episodes_per_condition = c.value("episodes", 100);
        cell.spec.seed = c.value("seed", 0);
        if (c.contains("features"))
            cell.spec.features = c.at("features").get<std::vector<int64_t>>();
        if (c.value("encode", "threshold") == std::string("rowtopk"))
            cell.spec.encode = EncodeMode::kPerRowTopK;
        cell.ranking_label = c.value("ranking", "manual");
        cells.push_back(std::move(cell));
    }
    return cells;
}

void write_campaign_results_csv(const std::vector<CampaignRow>& rows,
                                const std::filesystem::path& path) {
    std::string csv = "mode,layer,ranking,feature,alpha,sr,delta_sr,seed\n";
    for (const auto& row : rows) {
        csv += row.mode + format(",%d,", row.layer) + row.ranking + ",";
        if (row.feature >= 0) csv += std::to_string(row.feature);
        csv += format(",%.4f,%.4f,%.4f,%llu\n", row.alpha, row.sr, row.delta_sr,
                      static_cast<unsigned long long>(row.seed));
    }
    write_text(path, csv);
}

std::vector<TargetOffTargetRow> target_offtarget(const World& world, const SaeParams& params,
                                                 const std::vector<EventCluster>& clusters,
                                                 const ScoreMatrix& event_matrix, int layer,
                                                 int trials, uint64_t seed) {
    const int n_tasks = world.config.n_tasks;
    if (n_tasks < 2) throw InvalidConfig("target_offtarget: needs at least 2 tasks");

    std::map<std::string, int> task_index;
    for (int i = 0; i < n_tasks; ++i) task_index[world.tasks[static_cast<size_t>(i)].task_id] = i;

    Rng rng(seed);
    std::map<std::string, std::vector<size_t>> clusters_by_task;
    for (size_t i = 0; i < clusters.size(); ++i)
        clusters_by_task[clusters[i].task_id].push_back(i);

    struct Cell {
        int task = 0;
        int off_task = 0;
        int64_t feature = 0;
    };
    std::vector<Cell> cells;
    for (const auto& task : world.tasks) {
        auto it = clusters_by_task.find(task.task_id);
        if (it == clusters_by_task.end()) continue;
        std::vector<size_t> chosen = it->second.size() <= 3
                                         ? it->second
                                         : rng.sample(it->second, 3);
        std::sort(chosen.begin(), chosen.end());
        for (size_t ci : chosen) {
            // the cluster's highest event-aligned feature
            int64_t best_f = 0;
            double best = -1.0;
            for (int64_t f = 0; f < event_matrix.m; ++f)
                if (event_matrix.A(static_cast<int64_t>(ci), f) > best) {
                    best = event_matrix.A(static_cast<int64_t>(ci), f);
                    best_f = f;
                }
            Cell cell;
            cell.task = task_index.at(task.task_id);
            cell.off_task = static_cast<int>(rng.below(static_cast<uint64_t>(n_tasks - 1)));
            if (cell.off_task >= cell.task) ++cell.off_task;  // off-target != target
            cell.feature = best_f;
            cells.push_back(cell);
        }
    }

    auto sr_on_task = [&](int task, int64_t feature) {
        InterventionSpec spec;
        spec.mode = InterventionMode::kLatentScale;
        spec.layer = layer;
        spec.features = {feature};
        spec.alpha = 0.0;
        const StateHook hook = make_hook(params, spec, spec.features);
        int wins = 0;
        for (int i = 0; i < trials; ++i)
            if (run_episode(world, task, &hook, seed + 100 + static_cast<uint64_t>(i)).success)
                ++wins;
        return static_cast<double>(wins) / static_cast<double>(trials);
    };

    std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_task;
    for (const auto& cell : cells) {
        per_task[cell.task].first.push_back(sr_on_task(cell.task, cell.feature));
        per_task[cell.task].second.push_back(sr_on_task(cell.off_task, cell.feature));
    }

    std::vector<TargetOffTargetRow> rows;
    double all_target = 0.0, all_off = 0.0;
    int all_n = 0;
    for (const auto& [task, srs] : per_task) {
        TargetOffTargetRow row;
        row.scope = world.tasks[static_cast<size_t>(task)].task_id;
        row.n_clusters = static_cast<int>(srs.first.size());
        for (double v : srs.first) row.target_sr += v;
        for (double v : srs.second) row.offtarget_sr += v;
        row.target_sr /= srs.first.size();
        row.offtarget_sr /= srs.second.size();
        all_target += row.target_sr * row.n_clusters;
        all_off += row.offtarget_sr * row.n_clusters;
        all_n += row.n_clusters;
        rows.push_back(row);
    }
    if (all_n > 0) {
        TargetOffTargetRow all;
        all.scope = "all";
        all.n_clusters = all_n;
        all.target_sr = all_target / all_n;
        all.offtarget_sr = all_off / all_n;
        rows.push_back(all);
    }
    return rows;
}

void write_probe_csv(const ProbeResult& result, const std::filesystem::path& path) {
    std::string csv = "condition,balanced_accuracy,folds,seed\n";
    for (const char* name : {"sae_codes", "raw_hidden", "task_id_only", "shuffled_labels"}) {
        auto it = result.balanced_accuracy.find(name);
        if (it == result.balanced_accuracy.end()) continue;
        csv += std::string(name) + format(",%.4f,%d,%llu\n", it->second, result.folds,
                                          static_cast<unsigned long long>(result.seed));
    }
    write_text(path, csv);
}

void write_run_record(const std::filesystem::path& out_dir, const std::string& verb,
                      uint64_t seed, const std::string& config_text,
                      const std::vector<std::filesystem::path>& outputs) {
    json j;
    j["verb"] = verb;
    j["seed"] = seed;
    j["config_hash"] = format("%016llx", static_cast<unsigned long long>(fnv1a_hash(config_text)));
    j["version"] = kToolVersion;
    j["outputs"] = json::array();
    for (const auto& p : outputs) j["outputs"].push_back(p.filename().string());
    write_text(out_dir / "run.json", j.dump(2) + "\n");
}

}  // namespace evsae
