// evsae: event-grounded SAE analysis for sequential policies.
//
// Verbs cover the full pipeline: synth-gen (or ingest of external logs),
// sae-train/sae-eval, keyframes, cluster, annotate, rank, intervene, sweep,
// probe, report. Every verb is seeded and writes a run.json provenance record
// next to its outputs.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "evsae/intervention.hpp"
#include "evsae/pipeline.hpp"
#include "evsae/reports.hpp"
#include "evsae/tensor_io.hpp"

using namespace evsae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::string read_file_or_empty(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_line(const std::string& line) {
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

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> grid;
    for (const auto& tok : split_line(csv))
        if (!tok.empty()) grid.push_back(std::stod(tok));
    return grid;
}

std::vector<int64_t> parse_ids(const std::string& csv) {
    std::vector<int64_t> ids;
    for (const auto& tok : split_line(csv))
        if (!tok.empty()) ids.push_back(std::stoll(tok));
    return ids;
}

World world_from_suite(const std::filesystem::path& suite) {
    return gen_world(read_world_config(suite / "world.json")).first;
}

// --- verb implementations --------------------------------------------------

int cmd_ingest(const std::filesystem::path& manifest) {
    const RolloutSet set = ingest(manifest);
    int64_t rows = 0;
    for (const auto& r : set.rollouts) rows += r.T;
    std::set<int> layers;
    if (!set.rollouts.empty())
        for (const auto& [layer, acts] : set.rollouts.front().activations) layers.insert(layer);
    std::cout << "suite " << set.manifest.suite_id << ": " << set.rollouts.size()
              << " episodes, " << rows << " timesteps";
    if (!layers.empty()) {
        std::cout << ", layers";
        for (int l : layers) std::cout << " " << l;
    }
    std::cout << "\n";
    return kExitOk;
}

int cmd_synth_gen(const std::string& config_path, uint64_t seed, bool seed_set,
                  const std::filesystem::path& out) {
    WorldConfig cfg;
    if (!config_path.empty()) cfg = read_world_config(config_path);
    if (seed_set) cfg.seed = seed;
    auto [world, truth] = gen_world(cfg);
    auto outputs = write_suite(world, out);
    write_run_record(out, "synth-gen", cfg.seed, read_file_or_empty(out / "world.json"), outputs);
    std::cout << "wrote suite with " << cfg.n_tasks * cfg.episodes_per_task << " episodes to "
              << out.string() << "\n";
    return kExitOk;
}

int cmd_sae_train(const std::filesystem::path& suite, int layer, const SaeTrainConfig& cfg,
                  const std::filesystem::path& out) {
    const RolloutSet set = load_suite(suite);
    const TrainResult result = train_sae_on_set(cfg, set, layer);

    std::filesystem::create_directories(out);
    const auto ckpt = out / ("sae_layer" + std::to_string(layer) + ".bin");
    save_sae(result.params, ckpt);

    std::string history = "step,mse,aux,l0,dead\n";
    for (const auto& h : result.history)
        history += format("%lld,%.9f,%.9f,%.4f,%lld\n", static_cast<long long>(h.step), h.mse,
                          h.aux, h.l0, static_cast<long long>(h.dead_count));
    std::ofstream(out / "history.csv", std::ios::binary | std::ios::trunc) << history;

    write_run_record(out, "sae-train", cfg.seed,
                     format("layer=%d m=%lld k=%lld steps=%lld", layer,
                            static_cast<long long>(cfg.m), static_cast<long long>(cfg.k),
                            static_cast<long long>(cfg.steps)),
                     {ckpt, out / "history.csv"});
    if (result.diverged) {
        std::cout << "training diverged; wrote last good checkpoint to " << ckpt.string() << "\n";
        return kExitRuntime;
    }
    const SaeDiagnostics diag = diagnostics(result.params, set, layer);
    std::cout << format("trained %lld->%lld SAE (k=%lld): FVE %.3f, alive %.1f%%, avg L0 %.1f\n",
                        static_cast<long long>(result.params.d()),
                        static_cast<long long>(result.params.m()),
                        static_cast<long long>(result.params.k), diag.fve,
                        100.0 * diag.alive_fraction, diag.avg_l0);
    return kExitOk;
}

int cmd_sae_eval(const std::filesystem::path& suite, const std::filesystem::path& sae_path,
                 int layer, int hooked_episodes, uint64_t seed) {
    const RolloutSet set = load_suite(suite);
    const SaeParams params = load_sae(sae_path);
    const SaeDiagnostics diag = diagnostics(params, set, layer);
    std::cout << format("layer %d | %lld->%lld | FVE %.3f | alive %.1f%% | avg L0 %.1f\n", layer,
                        static_cast<long long>(params.d()), static_cast<long long>(params.m()),
                        diag.fve, 100.0 * diag.alive_fraction, diag.avg_l0);
    if (hooked_episodes > 0) {
        const World world = world_from_suite(suite);
        const double raw = baseline_sr(world, hooked_episodes, seed);
        InterventionSpec spec;
        spec.mode = InterventionMode::kReconOnly;
        spec.layer = layer;
        spec.episodes_per_condition = hooked_episodes;
        spec.seed = seed;
        const CampaignResult hooked = run_intervention(world, params, spec, raw);
        std::cout << format("raw SR %s | hooked SR %s\n", format_sr(raw).c_str(),
                            format_sr(hooked.mean.sr).c_str());
    }
    return kExitOk;
}

int cmd_keyframes(const std::filesystem::path& suite, double eta,
                  const std::filesystem::path& out_dir) {
    const RolloutSet set = load_suite(suite);
    const auto bundles = extract_suite_keyframes(set, eta);
    std::filesystem::create_directories(out_dir);
    write_keyframes_csv(bundles, out_dir / "keyframes.csv");
    double per_rollout = set.rollouts.empty()
                             ? 0.0
                             : static_cast<double>(bundles.size()) /
                                   static_cast<double>(set.rollouts.size());
    write_run_record(out_dir, "keyframes", 0, format("eta=%.4f", eta),
                     {out_dir / "keyframes.csv"});
    std::cout << format("extracted %zu keyframes (%.2f per rollout)\n", bundles.size(), per_rollout);
    return kExitOk;
}

int cmd_cluster(const std::filesystem::path& suite, double eta, double threshold, double coverage,
                const std::string& visual, const DescriptorWeights& weights,
                const std::filesystem::path& out_dir) {
    const RolloutSet set = load_suite(suite);
    const auto bundles = extract_suite_keyframes(set, eta);
    const auto visuals = visual_embeddings(suite, set, bundles, visual);
    auto clusters = cluster_suite(bundles, visuals, weights, threshold, set);
    const size_t total = clusters.size();

    std::vector<EventCluster> retained;
    for (const auto& task : set.manifest.tasks) {
        std::vector<EventCluster> task_clusters;
        for (const auto& c : clusters)
            if (c.task_id == task.task_id) task_clusters.push_back(c);
        auto kept = filter_recurring(std::move(task_clusters),
                                     set.n_episodes_in_task(task.task_id), coverage);
        retained.insert(retained.end(), kept.begin(), kept.end());
    }

    std::filesystem::create_directories(out_dir);
    write_clusters_csv(retained, out_dir / "clusters.csv");
    write_cluster_members_csv(retained, out_dir / "cluster_members.csv");
    write_run_record(out_dir, "cluster", 0,
                     format("eta=%.4f threshold=%.4f coverage=%.2f visual=%s", eta, threshold,
                            coverage, visual.c_str()),
                     {out_dir / "clusters.csv", out_dir / "cluster_members.csv"});
    std::cout << format("retained %zu/%zu clusters\n", retained.size(), total);
    return kExitOk;
}

int cmd_annotate(const std::filesystem::path& suite, const std::filesystem::path& dir,
                 const std::string& annotator_kind, double eta) {
    const RolloutSet set = load_suite(suite);
    auto clusters = read_clusters(dir / "clusters.csv", dir / "cluster_members.csv");

    std::map<std::string, std::string> descriptions;
    for (const auto& t : set.manifest.tasks) descriptions[t.task_id] = t.description;

    // rebuild bundles so exemplars carry state and offsets
    const auto bundles = extract_suite_keyframes(set, eta);
    std::map<std::pair<std::string, int64_t>, const KeyframeBundle*> bundle_at;
    for (const auto& b : bundles) bundle_at[{b.keyframe.episode_id, b.keyframe.t_i}] = &b;

    EventHintFn hint;
    if (std::filesystem::exists(suite / "events.csv"))
        hint = hint_from_event_log(read_event_log(suite / "events.csv"));

    std::unique_ptr<Annotator> annotator;
    if (annotator_kind == "stub") annotator = std::make_unique<StubAnnotator>();
    else if (annotator_kind == "remote") annotator = std::make_unique<HttpAnnotator>();
    else throw InvalidConfig("unknown annotator: " + annotator_kind);

    for (auto& cluster : clusters) {
        std::vector<KeyframeBundle> exemplars;
        for (const auto& kf : cluster.members) {
            auto it = bundle_at.find({kf.episode_id, kf.t_i});
            if (it != bundle_at.end()) exemplars.push_back(*it->second);
            if (exemplars.size() >= 4) break;
        }
        annotate_cluster(cluster, exemplars, descriptions[cluster.task_id], *annotator, hint);
    }
    write_clusters_csv(clusters, dir / "clusters.csv");
    std::cout << "annotated " << clusters.size() << " clusters\n";
    return kExitOk;
}

int cmd_rank(const std::filesystem::path& suite, const std::filesystem::path& sae_path, int layer,
             const std::filesystem::path& clusters_dir, int w, int64_t K, uint64_t seed,
             const std::filesystem::path& out_dir) {
    const RolloutSet set = load_suite(suite);
    const SaeParams params = load_sae(sae_path);
    const auto clusters = read_clusters(clusters_dir / "clusters.csv",
                                        clusters_dir / "cluster_members.csv");
    const SuiteCodes codes = compute_suite_codes(params, set, layer);
    const RankingSet rankings = compute_all_rankings(codes, clusters, w, K, seed);

    std::filesystem::create_directories(out_dir);
    write_rankings_csv(rankings, out_dir / "rankings.csv");
    write_score_matrix_csv(rankings.event_matrix, clusters, out_dir / "score_matrix.csv");
    write_overlaps_csv(rankings, K, out_dir / "overlaps.csv");
    write_run_record(out_dir, "rank", seed, format("layer=%d w=%d K=%lld", layer, w,
                                                   static_cast<long long>(K)),
                     {out_dir / "rankings.csv", out_dir / "score_matrix.csv",
                      out_dir / "overlaps.csv"});
    std::cout << format("ranked %lld features over %zu clusters (%zu alive)\n",
                        static_cast<long long>(codes.m), clusters.size(), rankings.alive.size());
    return kExitOk;
}

int cmd_intervene(const std::filesystem::path& suite, const std::filesystem::path& sae_path,
                  const std::filesystem::path& campaign_path, int baseline_episodes,
                  const std::filesystem::path& out_dir) {
    const SaeParams params = load_sae(sae_path);
    const World world = world_from_suite(suite);
    const auto cells = read_campaign(campaign_path);

    std::vector<CampaignRow> rows;
    uint64_t first_seed = 0;
    if (!cells.empty()) first_seed = cells.front().spec.seed;
    const double baseline = baseline_sr(world, baseline_episodes, first_seed);
    rows.push_back({"baseline", -1, "baseline", -1, 1.0, baseline, 0.0, first_seed});

    for (const auto& cell : cells) {
        const CampaignResult result = run_intervention(world, params, cell.spec, baseline);
        for (const auto& o : result.per_feature)
            rows.push_back({intervention_mode_name(cell.spec.mode), cell.spec.layer,
                            cell.ranking_label, o.feature.value_or(-1), cell.spec.alpha, o.sr,
                            o.delta_sr, cell.spec.seed});
        if (result.per_feature.size() > 1)
            rows.push_back({intervention_mode_name(cell.spec.mode) + "_mean", cell.spec.layer,
                            cell.ranking_label, -1, cell.spec.alpha, result.mean.sr,
                            result.mean.delta_sr, cell.spec.seed});
    }

    std::filesystem::create_directories(out_dir);
    write_campaign_results_csv(rows, out_dir / "results.csv");
    write_run_record(out_dir, "intervene", first_seed, read_file_or_empty(campaign_path),
                     {out_dir / "results.csv"});
    std::cout << format("ran %zu campaign cells (baseline SR %s)\n", cells.size(),
                        format_sr(baseline).c_str());
    return kExitOk;
}

int cmd_sweep(const std::filesystem::path& suite, const std::filesystem::path& sae_path, int layer,
              const std::vector<int64_t>& features, const std::vector<double>& grid, int episodes,
              uint64_t seed, const std::string& ranking_label,
              const std::filesystem::path& out_dir) {
    const SaeParams params = load_sae(sae_path);
    const World world = world_from_suite(suite);
    const double baseline = baseline_sr(world, episodes, seed);

    InterventionSpec spec;
    spec.mode = InterventionMode::kLatentScale;
    spec.layer = layer;
    spec.features = features;
    spec.episodes_per_condition = episodes;
    spec.seed = seed;
    const DoseResponseCurve curve = alpha_sweep(world, params, spec, grid, baseline, ranking_label);

    std::filesystem::create_directories(out_dir);
    std::string csv = "layer,ranking,alpha,sr,delta_sr\n";
    for (size_t i = 0; i < curve.alphas.size(); ++i)
        csv += format("%d,%s,%.4f,%.4f,%.4f\n", curve.layer, curve.ranking_label.c_str(),
                      curve.alphas[i], curve.sr_at_alpha[i],
                      100.0 * (curve.sr_at_alpha[i] - baseline));
    std::ofstream(out_dir / "curve.csv", std::ios::binary | std::ios::trunc) << csv;
    write_run_record(out_dir, "sweep", seed, format("layer=%d episodes=%d", layer, episodes),
                     {out_dir / "curve.csv"});
    std::cout << format("swept %zu grid points (baseline SR %s)\n", grid.size(),
                        format_sr(baseline).c_str());
    return kExitOk;
}

int cmd_probe(const std::filesystem::path& suite, const std::filesystem::path& sae_path, int layer,
              int folds, uint64_t seed, const std::filesystem::path& out_dir) {
    const RolloutSet set = load_suite(suite);
    const SaeParams params = load_sae(sae_path);
    const ProbeResult result = success_probe(set, params, layer, folds, seed);
    std::filesystem::create_directories(out_dir);
    write_probe_csv(result, out_dir / "probe.csv");
    write_run_record(out_dir, "probe", seed, format("layer=%d folds=%d", layer, folds),
                     {out_dir / "probe.csv"});
    for (const auto& [cond, acc] : result.balanced_accuracy)
        std::cout << format("%-16s balanced accuracy %.3f\n", cond.c_str(), acc);
    return kExitOk;
}

int cmd_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir) {
    ReportBundle bundle;

    // score matrix + cluster labels
    const auto matrix_path = run_dir / "score_matrix.csv";
    if (std::filesystem::exists(matrix_path)) {
        std::ifstream in(matrix_path);
        std::string line;
        std::getline(in, line);
        const auto header = split_line(line);
        const int64_t m = static_cast<int64_t>(header.size()) - 3;
        std::vector<std::vector<double>> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_line(line);
            bundle.matrix.cluster_ids.push_back(f[0]);
            bundle.row_task.push_back(f[1]);
            bundle.row_phase.push_back(f[2]);
            std::vector<double> row;
            for (int64_t i = 0; i < m; ++i) row.push_back(std::stod(f[static_cast<size_t>(3 + i)]));
            rows.push_back(std::move(row));
        }
        bundle.matrix.m = m;
        bundle.matrix.A.resize(static_cast<int64_t>(rows.size()), m);
        for (size_t r = 0; r < rows.size(); ++r)
            for (int64_t c = 0; c < m; ++c)
                bundle.matrix.A(static_cast<int64_t>(r), c) = rows[r][static_cast<size_t>(c)];
    }

    if (std::filesystem::exists(run_dir / "rankings.csv")) {
        std::ifstream in(run_dir / "rankings.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_line(line);
            RankingTableRow row;
            row.strategy = f[0];
            row.feature_id = std::stoll(f[1]);
            row.score = f[2].empty() ? std::nan("") : std::stod(f[2]);
            row.rank = std::stoi(f[3]);
            bundle.rankings.push_back(row);
            if (row.strategy == "event_aligned") bundle.heatmap_features.push_back(row.feature_id);
        }
    }
    if (bundle.heatmap_features.empty() && bundle.matrix.m > 0)
        for (int64_t f = 0; f < std::min<int64_t>(bundle.matrix.m, 16); ++f)
            bundle.heatmap_features.push_back(f);

    if (std::filesystem::exists(run_dir / "overlaps.csv")) {
        std::ifstream in(run_dir / "overlaps.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_line(line);
            std::string pct = f[1];
            if (!pct.empty() && pct.back() == '%') pct.pop_back();
            bundle.overlaps.emplace_back(f[0], std::stod(pct) / 100.0);
        }
    }

    if (std::filesystem::exists(run_dir / "results.csv")) {
        std::ifstream in(run_dir / "results.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_line(line);
            CampaignRow row;
            row.mode = f[0];
            row.layer = std::stoi(f[1]);
            row.ranking = f[2];
            row.feature = f[3].empty() ? -1 : std::stoll(f[3]);
            row.alpha = std::stod(f[4]);
            row.sr = std::stod(f[5]);
            row.delta_sr = std::stod(f[6]);
            row.seed = std::stoull(f[7]);
            if (row.mode == "baseline") bundle.baseline_sr = row.sr;
            else bundle.campaign.push_back(row);
        }
    }

    if (std::filesystem::exists(run_dir / "curve.csv")) {
        std::ifstream in(run_dir / "curve.csv");
        std::string line;
        std::getline(in, line);
        std::map<std::string, DoseResponseCurve> curves;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_line(line);
            const std::string key = f[0] + "/" + f[1];
            auto& curve = curves[key];
            curve.layer = std::stoi(f[0]);
            curve.ranking_label = f[1];
            curve.alphas.push_back(std::stod(f[2]));
            curve.sr_at_alpha.push_back(std::stod(f[3]));
        }
        for (auto& [key, curve] : curves) bundle.curves.push_back(std::move(curve));
    }

    const auto written = emit_reports(bundle, out_dir);
    write_run_record(out_dir, "report", 0, run_dir.string(), written);
    std::cout << "wrote " << written.size() << " report files to " << out_dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-grounded SAE analysis toolkit"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    std::string config_path, out_dir = "out";
    app.add_option("--seed", seed, "global seed")->capture_default_str();
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out", out_dir, "output directory")->capture_default_str();

    // ingest
    std::string manifest_path;
    auto* ingest_cmd = app.add_subcommand("ingest", "validate and summarize a rollout suite");
    ingest_cmd->add_option("--manifest", manifest_path, "manifest.json path")->required();

    // synth-gen
    auto* synth_cmd = app.add_subcommand("synth-gen", "generate a synthetic closed-loop suite");

    // sae-train
    std::string suite_dir, sae_path;
    int layer = kLateLayer;
    SaeTrainConfig train_cfg;
    auto* train_cmd = app.add_subcommand("sae-train", "train a BatchTopK SAE on suite activations");
    train_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    train_cmd->add_option("--layer", layer, "hook layer")->capture_default_str();
    train_cmd->add_option("--m", train_cfg.m, "dictionary size (0 = 2d)");
    train_cmd->add_option("--k", train_cfg.k, "active budget")->capture_default_str();
    train_cmd->add_option("--lr", train_cfg.learning_rate, "learning rate")->capture_default_str();
    train_cmd->add_option("--batch", train_cfg.batch_size, "batch size")->capture_default_str();
    train_cmd->add_option("--steps", train_cfg.steps, "training steps")->capture_default_str();
    train_cmd->add_option("--warmup", train_cfg.warmup_steps, "warmup steps")->capture_default_str();
    train_cmd->add_option("--decay-start", train_cfg.decay_start_fraction, "decay start fraction")
        ->capture_default_str();
    train_cmd->add_option("--lambda-aux", train_cfg.lambda_aux, "AuxK weight")->capture_default_str();
    train_cmd->add_option("--k-aux", train_cfg.k_aux, "AuxK budget (0 = 2k)")->capture_default_str();
    train_cmd->add_option("--dead-after", train_cfg.dead_after_steps, "dead feature window")
        ->capture_default_str();

    // sae-eval
    int hooked_episodes = 0;
    auto* eval_cmd = app.add_subcommand("sae-eval", "offline diagnostics and Hooked SR");
    eval_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    eval_cmd->add_option("--sae", sae_path, "SAE checkpoint")->required();
    eval_cmd->add_option("--layer", layer, "hook layer")->capture_default_str();
    eval_cmd->add_option("--hooked-episodes", hooked_episodes,
                         "closed-loop episodes for Hooked SR (0 = skip)");

    // keyframes
    double eta = kDefaultAweEta;
    auto* keyframes_cmd = app.add_subcommand("keyframes", "extract AWE keyframes");
    keyframes_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    keyframes_cmd->add_option("--eta", eta, "AWE error budget (meters)")->capture_default_str();

    // cluster
    double threshold = kDefaultCosineThreshold, coverage = kDefaultMinCoverage;
    std::string visual = "synth";
    DescriptorWeights weights;
    auto* cluster_cmd = app.add_subcommand("cluster", "cluster keyframes into events");
    cluster_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    cluster_cmd->add_option("--eta", eta, "AWE error budget")->capture_default_str();
    cluster_cmd->add_option("--threshold", threshold, "cosine distance threshold")
        ->capture_default_str();
    cluster_cmd->add_option("--coverage", coverage, "episode coverage threshold")
        ->capture_default_str();
    cluster_cmd->add_option("--visual", visual, "visual source: synth|none|file:<path>")
        ->capture_default_str();
    cluster_cmd->add_option("--lambda-v", weights.lambda_v, "visual weight")->capture_default_str();
    cluster_cmd->add_option("--lambda-s", weights.lambda_s, "state weight")->capture_default_str();
    cluster_cmd->add_option("--lambda-p", weights.lambda_p, "progress weight")->capture_default_str();

    // annotate
    std::string clusters_dir, annotator_kind = "stub";
    auto* annotate_cmd = app.add_subcommand("annotate", "attach phrase/phase labels to clusters");
    annotate_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    annotate_cmd->add_option("--dir", clusters_dir, "directory with clusters.csv")->required();
    annotate_cmd->add_option("--annotator", annotator_kind, "stub|remote")->capture_default_str();
    annotate_cmd->add_option("--eta", eta, "AWE error budget")->capture_default_str();

    // rank
    int window_radius = kDefaultWindowRadius;
    int64_t top_k = 5;
    auto* rank_cmd = app.add_subcommand("rank", "score features against event clusters");
    rank_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    rank_cmd->add_option("--sae", sae_path, "SAE checkpoint")->required();
    rank_cmd->add_option("--layer", layer, "hook layer")->capture_default_str();
    rank_cmd->add_option("--clusters", clusters_dir, "directory with clusters.csv")->required();
    rank_cmd->add_option("--w", window_radius, "scoring window radius")->capture_default_str();
    rank_cmd->add_option("--K", top_k, "top-K selection size")->capture_default_str();

    // intervene
    std::string campaign_path;
    int baseline_episodes = 100;
    auto* intervene_cmd = app.add_subcommand("intervene", "run a closed-loop campaign");
    intervene_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    intervene_cmd->add_option("--sae", sae_path, "SAE checkpoint")->required();
    intervene_cmd->add_option("--campaign", campaign_path, "campaign JSON")->required();
    intervene_cmd->add_option("--baseline-episodes", baseline_episodes, "baseline episode count")
        ->capture_default_str();

    // sweep
    std::string features_csv, grid_csv = "0,0.25,0.5,0.75,1", ranking_label = "manual";
    int sweep_episodes = 100;
    auto* sweep_cmd = app.add_subcommand("sweep", "dose-response alpha sweep");
    sweep_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    sweep_cmd->add_option("--sae", sae_path, "SAE checkpoint")->required();
    sweep_cmd->add_option("--layer", layer, "hook layer")->capture_default_str();
    sweep_cmd->add_option("--features", features_csv, "comma-separated feature ids")->required();
    sweep_cmd->add_option("--grid", grid_csv, "alpha grid")->capture_default_str();
    sweep_cmd->add_option("--episodes", sweep_episodes, "episodes per grid point")
        ->capture_default_str();
    sweep_cmd->add_option("--ranking", ranking_label, "ranking label for the curve")
        ->capture_default_str();

    // probe
    int folds = 5;
    auto* probe_cmd = app.add_subcommand("probe", "success-prediction probe");
    probe_cmd->add_option("--suite", suite_dir, "suite directory")->required();
    probe_cmd->add_option("--sae", sae_path, "SAE checkpoint")->required();
    probe_cmd->add_option("--layer", layer, "hook layer")->capture_default_str();
    probe_cmd->add_option("--folds", folds, "cross-validation folds")->capture_default_str();

    // report
    std::string run_dir;
    auto* report_cmd = app.add_subcommand("report", "emit heatmaps, tables and curves");
    report_cmd->add_option("--dir", run_dir, "directory with pipeline CSVs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest_cmd->parsed()) return cmd_ingest(manifest_path);
        if (synth_cmd->parsed())
            return cmd_synth_gen(config_path, seed, app.count("--seed") > 0, out_dir);
        if (train_cmd->parsed()) {
            if (!config_path.empty()) {
                SaeTrainConfig file_cfg = read_sae_config(config_path);
                // flags override file values only when provided
                if (train_cmd->count("--m") == 0) train_cfg.m = file_cfg.m;
                if (train_cmd->count("--k") == 0) train_cfg.k = file_cfg.k;
                if (train_cmd->count("--lr") == 0) train_cfg.learning_rate = file_cfg.learning_rate;
                if (train_cmd->count("--batch") == 0) train_cfg.batch_size = file_cfg.batch_size;
                if (train_cmd->count("--steps") == 0) train_cfg.steps = file_cfg.steps;
                if (train_cmd->count("--warmup") == 0) train_cfg.warmup_steps = file_cfg.warmup_steps;
                if (train_cmd->count("--decay-start") == 0)
                    train_cfg.decay_start_fraction = file_cfg.decay_start_fraction;
                if (train_cmd->count("--lambda-aux") == 0) train_cfg.lambda_aux = file_cfg.lambda_aux;
                if (train_cmd->count("--k-aux") == 0) train_cfg.k_aux = file_cfg.k_aux;
                if (train_cmd->count("--dead-after") == 0)
                    train_cfg.dead_after_steps = file_cfg.dead_after_steps;
            }
            train_cfg.seed = seed;
            return cmd_sae_train(suite_dir, layer, train_cfg, out_dir);
        }
        if (eval_cmd->parsed())
            return cmd_sae_eval(suite_dir, sae_path, layer, hooked_episodes, seed);
        if (keyframes_cmd->parsed()) return cmd_keyframes(suite_dir, eta, out_dir);
        if (cluster_cmd->parsed())
            return cmd_cluster(suite_dir, eta, threshold, coverage, visual, weights, out_dir);
        if (annotate_cmd->parsed())
            return cmd_annotate(suite_dir, clusters_dir, annotator_kind, eta);
        if (rank_cmd->parsed())
            return cmd_rank(suite_dir, sae_path, layer, clusters_dir, window_radius, top_k, seed,
                            out_dir);
        if (intervene_cmd->parsed())
            return cmd_intervene(suite_dir, sae_path, campaign_path, baseline_episodes, out_dir);
        if (sweep_cmd->parsed())
            return cmd_sweep(suite_dir, sae_path, layer, parse_ids(features_csv),
                             parse_grid(grid_csv), sweep_episodes, seed, ranking_label, out_dir);
        if (probe_cmd->parsed()) return cmd_probe(suite_dir, sae_path, layer, folds, seed, out_dir);
        if (report_cmd->parsed()) return cmd_report(run_dir, out_dir);
        std::cerr << "no subcommand\n";
        return kExitValidation;
    } catch (const MissingFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const FormatVersionMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ShapeMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NonFiniteActivation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const InvalidConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
