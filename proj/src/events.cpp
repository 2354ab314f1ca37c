#include "evsae/events.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace evsae {

using nlohmann::json;

bool is_valid_phase(const std::string& phase) {
    return std::find(kPhaseSet.begin(), kPhaseSet.end(), phase) != kPhaseSet.end();
}

Eigen::VectorXd bundle_state_vector(const KeyframeBundle& bundle) {
    Eigen::VectorXd s(8);
    s.segment<3>(0) = bundle.ee_pos.cast<double>();
    s.segment<4>(3) = bundle.ee_quat.cast<double>();
    s(7) = static_cast<double>(bundle.gripper);
    return s;
}

EventDescriptor build_descriptor(const KeyframeBundle& bundle, const Eigen::VectorXd& visual_embed,
                                 const Eigen::VectorXd& state_vec,
                                 const DescriptorWeights& weights) {
    if (weights.lambda_v < 0.0 || weights.lambda_s < 0.0 || weights.lambda_p < 0.0 ||
        (weights.lambda_v == 0.0 && weights.lambda_s == 0.0 && weights.lambda_p == 0.0))
        throw Error("descriptor weights must be nonnegative and not all zero");

    auto normalized = [](const Eigen::VectorXd& v) {
        const double n = v.norm();
        return n > 0.0 ? Eigen::VectorXd(v / n) : v;
    };

    EventDescriptor desc;
    desc.visual_dim = static_cast<int>(visual_embed.size());
    desc.state_dim = static_cast<int>(state_vec.size());

    const double p = std::clamp(bundle.progress, 0.0, 1.0);
    Eigen::VectorXd full(desc.visual_dim + desc.state_dim + 1);
    full.head(desc.visual_dim) = weights.lambda_v * normalized(visual_embed);
    full.segment(desc.visual_dim, desc.state_dim) = weights.lambda_s * normalized(state_vec);
    full(desc.visual_dim + desc.state_dim) = weights.lambda_p * p;

    const double norm = full.norm();
    if (norm == 0.0)
        throw AllZeroDescriptor("all descriptor components are zero for episode " +
                                bundle.keyframe.episode_id + " at t=" +
                                std::to_string(bundle.keyframe.t_i));
    desc.vector = full / norm;
    return desc;
}

std::vector<std::vector<int>> cluster_events(const std::vector<EventDescriptor>& descriptors,
                                             double threshold) {
    const int n = static_cast<int>(descriptors.size());
    if (n == 0) throw Error("cluster_events: no descriptors");
    if (threshold <= 0.0 || threshold >= 2.0)
        throw Error("cluster_events: threshold must lie in (0, 2)");

    // pairwise cosine distance (descriptors are unit norm)
    Eigen::MatrixXd dist(n, n);
    for (int i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            const double d = 1.0 - descriptors[static_cast<size_t>(i)].vector.dot(
                                       descriptors[static_cast<size_t>(j)].vector);
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }

    struct Cluster {
        std::vector<int> members;
        int min_index;
        bool active = true;
    };
    std::vector<Cluster> clusters(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) clusters[static_cast<size_t>(i)] = {{i}, i, true};

    // Lance-Williams average-linkage updates over the slot distance matrix
    Eigen::MatrixXd cd = dist;

    for (;;) {
        double best = std::numeric_limits<double>::infinity();
        int best_a = -1, best_b = -1;
        for (int a = 0; a < n; ++a) {
            if (!clusters[static_cast<size_t>(a)].active) continue;
            for (int b = a + 1; b < n; ++b) {
                if (!clusters[static_cast<size_t>(b)].active) continue;
                const double d = cd(a, b);
                if (d < best) {
                    best = d;
                    best_a = a;
                    best_b = b;
                } else if (d == best && best_a >= 0) {
                    // smallest member-index pair wins
                    const int ka = std::min(clusters[static_cast<size_t>(a)].min_index,
                                            clusters[static_cast<size_t>(b)].min_index);
                    const int kb = std::max(clusters[static_cast<size_t>(a)].min_index,
                                            clusters[static_cast<size_t>(b)].min_index);
                    const int ca = std::min(clusters[static_cast<size_t>(best_a)].min_index,
                                            clusters[static_cast<size_t>(best_b)].min_index);
                    const int cb = std::max(clusters[static_cast<size_t>(best_a)].min_index,
                                            clusters[static_cast<size_t>(best_b)].min_index);
                    if (ka < ca || (ka == ca && kb < cb)) {
                        best_a = a;
                        best_b = b;
                    }
                }
            }
        }
        if (best_a < 0 || best > threshold) break;

        Cluster& a = clusters[static_cast<size_t>(best_a)];
        Cluster& b = clusters[static_cast<size_t>(best_b)];
        const double na = static_cast<double>(a.members.size());
        const double nb = static_cast<double>(b.members.size());
        for (int k = 0; k < n; ++k) {
            if (!clusters[static_cast<size_t>(k)].active || k == best_a || k == best_b) continue;
            const double d = (na * cd(best_a, k) + nb * cd(best_b, k)) / (na + nb);
            cd(best_a, k) = d;
            cd(k, best_a) = d;
        }
        a.members.insert(a.members.end(), b.members.begin(), b.members.end());
        a.min_index = std::min(a.min_index, b.min_index);
        b.active = false;
    }

    std::vector<std::vector<int>> result;
    std::vector<int> order;
    for (int i = 0; i < n; ++i)
        if (clusters[static_cast<size_t>(i)].active) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        return clusters[static_cast<size_t>(x)].min_index < clusters[static_cast<size_t>(y)].min_index;
    });
    for (int i : order) {
        auto members = clusters[static_cast<size_t>(i)].members;
        std::sort(members.begin(), members.end());
        result.push_back(std::move(members));
    }
    return result;
}

std::vector<EventCluster> filter_recurring(std::vector<EventCluster> clusters,
                                           int n_episodes_in_task, double min_coverage) {
    if (min_coverage <= 0.0 || min_coverage > 1.0)
        throw Error("filter_recurring: min_coverage must lie in (0, 1]");
    std::vector<EventCluster> kept;
    for (auto& c : clusters) {
        std::set<std::string> episodes;
        for (const auto& kf : c.members) episodes.insert(kf.episode_id);
        c.coverage = n_episodes_in_task > 0
                         ? static_cast<double>(episodes.size()) / static_cast<double>(n_episodes_in_task)
                         : 0.0;
        if (c.coverage >= min_coverage) kept.push_back(std::move(c));
    }
    return kept;
}

std::vector<EventCluster> cluster_suite(const std::vector<KeyframeBundle>& bundles,
                                        const std::vector<Eigen::VectorXd>& visuals,
                                        const DescriptorWeights& weights, double threshold,
                                        const RolloutSet& set) {
    if (bundles.size() != visuals.size())
        throw ShapeMismatch("cluster_suite: bundles and visual embeddings differ in length");

    std::vector<EventCluster> all;
    for (const auto& task : set.manifest.tasks) {
        std::vector<int> task_bundle_idx;
        std::vector<EventDescriptor> descriptors;
        for (int i = 0; i < static_cast<int>(bundles.size()); ++i) {
            const auto& b = bundles[static_cast<size_t>(i)];
            if (b.keyframe.task_id != task.task_id) continue;
            descriptors.push_back(build_descriptor(b, visuals[static_cast<size_t>(i)],
                                                   bundle_state_vector(b), weights));
            task_bundle_idx.push_back(i);
        }
        if (descriptors.empty()) continue;

        auto partition = cluster_events(descriptors, threshold);
        int seq = 0;
        for (const auto& member_ids : partition) {
            EventCluster c;
            c.cluster_id = task.task_id + "_c" + std::to_string(seq++);
            c.task_id = task.task_id;
            for (int local : member_ids) {
                c.member_indices.push_back(task_bundle_idx[static_cast<size_t>(local)]);
                c.members.push_back(bundles[static_cast<size_t>(
                                                task_bundle_idx[static_cast<size_t>(local)])]
                                        .keyframe);
            }
            all.push_back(std::move(c));
        }
    }
    return all;
}

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

namespace {

const std::map<std::string, Annotation> kStubTable = {
    {"approach_start", {"approaching object", "pre_grasp"}},
    {"grasp_close", {"closing gripper on object", "immobilization"}},
    {"transport_start", {"transporting object to target", "transition"}},
    {"release_open", {"releasing object", "detach"}},
    {"withdraw", {"withdrawing from object", "post_grasp"}},
};

}  // namespace

Annotation StubAnnotator::annotate(const std::string&, const std::vector<ClipMeta>& clips) {
    std::map<std::string, int> votes;
    for (const auto& clip : clips)
        if (!clip.event_type_hint.empty()) ++votes[clip.event_type_hint];
    if (votes.empty()) return {"unlabeled event", "transition"};
    // majority vote, lexicographically smallest type on ties (map order)
    std::string winner;
    int best = 0;
    for (const auto& [type, n] : votes)
        if (n > best) {
            best = n;
            winner = type;
        }
    auto it = kStubTable.find(winner);
    if (it == kStubTable.end()) return {"unlabeled event", "transition"};
    return it->second;
}

Annotation parse_annotation(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw MalformedAnnotation(std::string("annotation is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw MalformedAnnotation("annotation top-level value must be a single object");
    if (j.size() != 2 || !j.contains("phrase") || !j.contains("phase"))
        throw MalformedAnnotation("annotation must contain exactly the keys 'phrase' and 'phase'");
    if (!j["phrase"].is_string() || !j["phase"].is_string())
        throw MalformedAnnotation("'phrase' and 'phase' must be strings");
    Annotation a{j["phrase"].get<std::string>(), j["phase"].get<std::string>()};
    if (a.phrase.empty()) throw MalformedAnnotation("'phrase' must be non-empty");
    if (!is_valid_phase(a.phase))
        throw MalformedAnnotation("phase '" + a.phase + "' is outside the closed set");
    return a;
}

std::string annotation_prompt(const std::string& task_description, const std::string& cluster_id,
                              double coverage, int n_clips, int frames_per_clip) {
    std::string p;
    p += "You are labeling a recurring event in a robot manipulation task.\n\n";
    p += "You will be shown " + std::to_string(n_clips) +
         " image sequences from different rollout\nepisodes of the same task. Each sequence "
         "contains " + std::to_string(frames_per_clip) +
         " images in\nchronological order. All sequences were clustered automatically\nand are "
         "intended to depict the same recurring event type. Treat\neach sequence as one short "
         "clip; the model input is therefore a\nsmall batch of clips.\n\n";
    p += "Task instruction: \"" + task_description + "\"\n";
    p += "Cluster id: " + cluster_id + "\n";
    p += "Episode coverage: " + format("%.2f", coverage) + "\n\n";
    p += "Your job is to assign one canonical phrase describing the shared\nevent across the "
         "sequences. Focus on the common event across clips,\nnot small differences between "
         "episodes. Prefer a dynamic event\ndescription (e.g., releasing, approaching) over a "
         "static state\ndescription. If the later frames make the event clearer, prioritize\n"
         "them when choosing the phrase and phase.\n\n";
    p += "Choose exactly one phase label from the closed set:\n  pre_grasp, immobilization, "
         "contact, detach, post_grasp,\n  transition.\n\n";
    p += "Return JSON with exactly two keys:\n  {\n    \"phrase\": <short canonical event "
         "phrase>,\n    \"phase\":  <one label from the set above>\n  }\n\n";
    p += "The top-level JSON value must be a single object, not a list.\nOutput exactly one "
         "short human-readable phrase. Do not include\nany keys other than \"phrase\" and "
         "\"phase\", and do not include\nmarkdown fences.\n";
    return p;
}

Annotation annotate_cluster(EventCluster& cluster, const std::vector<KeyframeBundle>& exemplars,
                            const std::string& task_description, Annotator& annotator,
                            const EventHintFn& event_hint) {
    std::vector<ClipMeta> clips;
    int frames = 5;
    for (const auto& b : exemplars) {
        ClipMeta meta;
        meta.episode_id = b.keyframe.episode_id;
        meta.t_i = b.keyframe.t_i;
        meta.n_frames = static_cast<int>(b.frame_offsets.size());
        if (event_hint) meta.event_type_hint = event_hint(b.keyframe);
        clips.push_back(meta);
        frames = meta.n_frames > 0 ? meta.n_frames : frames;
    }
    const std::string prompt = annotation_prompt(task_description, cluster.cluster_id,
                                                 cluster.coverage,
                                                 static_cast<int>(exemplars.size()), frames);
    Annotation a = annotator.annotate(prompt, clips);
    if (!is_valid_phase(a.phase))
        throw MalformedAnnotation("annotator returned out-of-set phase '" + a.phase + "'");
    cluster.phrase = a.phrase;
    cluster.phase = a.phase;
    return a;
}

}  // namespace evsae
