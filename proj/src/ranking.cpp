#include "evsae/ranking.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace evsae {

std::array<Template, 3> make_templates(int w) {
    if (w < 1) throw Error("make_templates: w must be >= 1");
    const int len = 2 * w + 1;

    auto finish = [&](TemplateKind kind, Eigen::VectorXd raw) {
        raw.array() -= raw.mean();
        raw /= raw.norm();
        return Template{kind, w, raw};
    };

    Eigen::VectorXd pulse(len), up(len);
    for (int i = 0; i < len; ++i) {
        const int delta = i - w;
        pulse(i) = 1.0 - std::abs(static_cast<double>(delta)) / (w + 1.0);
        up(i) = delta < 0 ? -1.0 : 1.0;
    }
    return {finish(TemplateKind::kPulse, pulse), finish(TemplateKind::kUp, up),
            finish(TemplateKind::kDown, -up)};
}

double per_event_score(const Eigen::VectorXd& trace, const Template& tmpl) {
    if (trace.size() != tmpl.values.size())
        throw ShapeMismatch("per_event_score: trace length " + std::to_string(trace.size()) +
                            " != template length " + std::to_string(tmpl.values.size()));
    const double mean = trace.mean();
    const double s = (trace.array() - mean).matrix().dot(tmpl.values);
    return std::max(s, 0.0);
}

SuiteCodes compute_suite_codes(const SaeParams& params, const RolloutSet& set, int layer,
                               EncodeMode mode) {
    SuiteCodes codes;
    codes.m = params.m();
    for (const auto& r : set.rollouts) {
        auto it = r.activations.find(layer);
        if (it == r.activations.end())
            throw UnknownLayer("layer " + std::to_string(layer) + " absent from episode " +
                               r.episode_id);
        codes.by_episode[r.episode_id] = encode_rows(params, it->second.cast<double>(), mode);
    }
    return codes;
}

namespace {

// zero-padded window of feature activations around t_i
Eigen::VectorXd window_trace(const Eigen::MatrixXd& episode_codes, int64_t t_i, int64_t f, int w) {
    Eigen::VectorXd trace = Eigen::VectorXd::Zero(2 * w + 1);
    const int64_t T = episode_codes.rows();
    for (int delta = -w; delta <= w; ++delta) {
        const int64_t t = t_i + delta;
        if (t >= 0 && t < T) trace(delta + w) = episode_codes(t, f);
    }
    return trace;
}

// members of cluster r grouped by episode, insertion-ordered by episode id
std::map<std::string, std::vector<const Keyframe*>> by_episode(const EventCluster& cluster) {
    std::map<std::string, std::vector<const Keyframe*>> groups;
    for (const auto& kf : cluster.members) groups[kf.episode_id].push_back(&kf);
    return groups;
}

}  // namespace

std::pair<ScoreMatrix, Eigen::VectorXd> event_aligned(const SuiteCodes& codes,
                                                      const std::vector<EventCluster>& clusters,
                                                      int w) {
    if (clusters.empty()) throw EmptyClusterSet("event_aligned: no retained clusters");
    const auto templates = make_templates(w);
    const int64_t m = codes.m;

    ScoreMatrix matrix;
    matrix.m = m;
    matrix.A = Eigen::MatrixXd::Zero(static_cast<int64_t>(clusters.size()), m);

    for (size_t r = 0; r < clusters.size(); ++r) {
        matrix.cluster_ids.push_back(clusters[r].cluster_id);
        const auto groups = by_episode(clusters[r]);

        for (int64_t f = 0; f < m; ++f) {
            double episode_sum = 0.0;
            for (const auto& [episode_id, events] : groups) {
                const Eigen::MatrixXd& ep_codes = codes.by_episode.at(episode_id);
                double best_template = 0.0;
                for (const auto& tmpl : templates) {
                    double event_sum = 0.0;
                    for (const Keyframe* kf : events)
                        event_sum += per_event_score(window_trace(ep_codes, kf->t_i, f, w), tmpl);
                    best_template = std::max(best_template,
                                             event_sum / static_cast<double>(events.size()));
                }
                episode_sum += best_template;
            }
            matrix.A(static_cast<int64_t>(r), f) =
                episode_sum / static_cast<double>(groups.size());
        }
    }

    Eigen::VectorXd scores = matrix.A.colwise().mean().transpose();
    return {std::move(matrix), std::move(scores)};
}

std::pair<ScoreMatrix, Eigen::VectorXd> window_mean(const SuiteCodes& codes,
                                                    const std::vector<EventCluster>& clusters,
                                                    int w) {
    if (clusters.empty()) throw EmptyClusterSet("window_mean: no retained clusters");
    const int64_t m = codes.m;
    const double window_len = 2.0 * w + 1.0;

    ScoreMatrix matrix;
    matrix.m = m;
    matrix.A = Eigen::MatrixXd::Zero(static_cast<int64_t>(clusters.size()), m);
    Eigen::VectorXd weighted = Eigen::VectorXd::Zero(m);
    double total_events = 0.0;

    for (size_t r = 0; r < clusters.size(); ++r) {
        matrix.cluster_ids.push_back(clusters[r].cluster_id);
        const auto groups = by_episode(clusters[r]);

        for (int64_t f = 0; f < m; ++f) {
            double episode_sum = 0.0;
            for (const auto& [episode_id, events] : groups) {
                const Eigen::MatrixXd& ep_codes = codes.by_episode.at(episode_id);
                double event_sum = 0.0;
                for (const Keyframe* kf : events)
                    event_sum += window_trace(ep_codes, kf->t_i, f, w).sum() / window_len;
                episode_sum += event_sum / static_cast<double>(events.size());
            }
            matrix.A(static_cast<int64_t>(r), f) =
                episode_sum / static_cast<double>(groups.size());
        }
        const double n_r = static_cast<double>(clusters[r].members.size());
        weighted += n_r * matrix.A.row(static_cast<int64_t>(r)).transpose();
        total_events += n_r;
    }

    Eigen::VectorXd scores = weighted / total_events;
    return {std::move(matrix), std::move(scores)};
}

Eigen::VectorXd task_mean(const SuiteCodes& codes) {
    if (codes.by_episode.empty()) throw Error("task_mean: no rollouts");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(codes.m);
    double rows = 0.0;
    for (const auto& [id, ep_codes] : codes.by_episode) {
        sum += ep_codes.colwise().sum().transpose();
        rows += static_cast<double>(ep_codes.rows());
    }
    return sum / rows;
}

std::vector<int64_t> alive_features(const SuiteCodes& codes) {
    std::vector<bool> alive(static_cast<size_t>(codes.m), false);
    for (const auto& [id, ep_codes] : codes.by_episode)
        for (int64_t f = 0; f < codes.m; ++f)
            if (!alive[static_cast<size_t>(f)] && (ep_codes.col(f).array() > 0.0).any())
                alive[static_cast<size_t>(f)] = true;
    std::vector<int64_t> out;
    for (int64_t f = 0; f < codes.m; ++f)
        if (alive[static_cast<size_t>(f)]) out.push_back(f);
    return out;
}

std::vector<int64_t> top_k_of(const Eigen::VectorXd& scores, int64_t K) {
    std::vector<int64_t> idx(static_cast<size_t>(scores.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (scores(a) != scores(b)) return scores(a) > scores(b);
        return a < b;
    });
    idx.resize(static_cast<size_t>(std::min<int64_t>(K, scores.size())));
    return idx;
}

std::vector<int64_t> random_alive(const std::vector<int64_t>& alive,
                                  const std::vector<int64_t>& excluded, int64_t K, uint64_t seed) {
    std::set<int64_t> banned(excluded.begin(), excluded.end());
    std::vector<int64_t> pool;
    for (int64_t f : alive)
        if (!banned.count(f)) pool.push_back(f);
    if (static_cast<int64_t>(pool.size()) < K)
        throw InsufficientAliveFeatures("random_alive: pool has " + std::to_string(pool.size()) +
                                        " features, need " + std::to_string(K));
    Rng rng(seed);
    return rng.sample(pool, static_cast<size_t>(K));
}

double top_k_overlap(const RankingResult& a, const RankingResult& b, int64_t K) {
    if (static_cast<int64_t>(a.top_k.size()) < K || static_cast<int64_t>(b.top_k.size()) < K)
        throw Error("top_k_overlap: both rankings must carry at least K ids");
    std::set<int64_t> sa(a.top_k.begin(), a.top_k.begin() + K);
    int64_t inter = 0;
    for (int64_t i = 0; i < K; ++i)
        if (sa.count(b.top_k[static_cast<size_t>(i)])) ++inter;
    return static_cast<double>(inter) / static_cast<double>(K);
}

std::string strategy_name(RankStrategy s) {
    switch (s) {
        case RankStrategy::kEventAligned: return "event_aligned";
        case RankStrategy::kWindowMean: return "window_mean";
        case RankStrategy::kTaskMean: return "task_mean";
        case RankStrategy::kRandomAlive: return "random_alive";
    }
    return "unknown";
}

RankingResult make_ranking(RankStrategy strategy, const Eigen::VectorXd& scores, int64_t K) {
    RankingResult r;
    r.strategy = strategy;
    r.scores = scores;
    r.top_k = top_k_of(scores, K);
    return r;
}

RankingResult make_random_ranking(const std::vector<int64_t>& alive,
                                  const std::vector<int64_t>& excluded, int64_t K, uint64_t seed) {
    RankingResult r;
    r.strategy = RankStrategy::kRandomAlive;
    r.top_k = random_alive(alive, excluded, K, seed);
    r.seed = seed;
    return r;
}

}  // namespace evsae
