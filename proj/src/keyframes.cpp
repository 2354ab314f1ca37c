#include "evsae/keyframes.hpp"

#include <algorithm>
#include <limits>

namespace evsae {

double segment_error(const Eigen::MatrixXf& traj, int64_t i, int64_t j) {
    const int64_t T = traj.rows();
    if (i < 0 || j >= T || i >= j)
        throw IndexOutOfRange("segment_error: need 0 <= i < j < T, got i=" + std::to_string(i) +
                              ", j=" + std::to_string(j) + ", T=" + std::to_string(T));
    double worst = 0.0;
    for (int64_t t = i; t <= j; ++t) {
        const double u = static_cast<double>(t - i) / static_cast<double>(j - i);
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double a = traj(i, c), b = traj(j, c);
            const double interp = a + u * (b - a);
            const double diff = static_cast<double>(traj(t, c)) - interp;
            sq += diff * diff;
        }
        worst = std::max(worst, std::sqrt(sq));
    }
    return worst;
}

std::vector<int64_t> awe_extract(const Eigen::MatrixXf& traj, double eta) {
    const int64_t T = traj.rows();
    if (T < 2) throw IndexOutOfRange("awe_extract: trajectory needs T >= 2");
    if (eta <= 0.0) throw Error("awe_extract: eta must be positive");

    // feasible[i][j-i-1] <=> chord i->j stays within eta
    std::vector<std::vector<char>> feasible(static_cast<size_t>(T));
    for (int64_t i = 0; i < T - 1; ++i) {
        feasible[static_cast<size_t>(i)].resize(static_cast<size_t>(T - i - 1), 0);
        for (int64_t j = i + 1; j < T; ++j)
            feasible[static_cast<size_t>(i)][static_cast<size_t>(j - i - 1)] =
                segment_error(traj, i, j) <= eta;
    }
    auto edge = [&](int64_t i, int64_t j) {
        return feasible[static_cast<size_t>(i)][static_cast<size_t>(j - i - 1)] != 0;
    };

    // fewest edges from each node to T-1 (adjacent steps always feasible, so
    // every node reaches the end)
    const int64_t inf = std::numeric_limits<int64_t>::max() / 2;
    std::vector<int64_t> to_goal(static_cast<size_t>(T), inf);
    to_goal[static_cast<size_t>(T - 1)] = 0;
    for (int64_t i = T - 2; i >= 0; --i)
        for (int64_t j = i + 1; j < T; ++j)
            if (edge(i, j))
                to_goal[static_cast<size_t>(i)] =
                    std::min(to_goal[static_cast<size_t>(i)], to_goal[static_cast<size_t>(j)] + 1);

    // walk forward taking the smallest next index that preserves optimality;
    // this yields the lexicographically smallest minimal sequence
    std::vector<int64_t> waypoints{0};
    int64_t cur = 0;
    while (cur != T - 1) {
        for (int64_t j = cur + 1; j < T; ++j) {
            if (edge(cur, j) && to_goal[static_cast<size_t>(j)] == to_goal[static_cast<size_t>(cur)] - 1) {
                waypoints.push_back(j);
                cur = j;
                break;
            }
        }
    }
    return waypoints;
}

std::vector<KeyframeBundle> make_bundles(const Rollout& rollout,
                                         const std::vector<int64_t>& waypoints,
                                         const std::string& task_description,
                                         int episode_index) {
    std::vector<KeyframeBundle> bundles;
    bundles.reserve(waypoints.size());
    int rank = 0;
    for (int64_t t_i : waypoints) {
        KeyframeBundle b;
        b.keyframe = {rollout.episode_id, rollout.task_id, t_i, rank++};
        for (int off : kBundleOffsets) {
            int64_t t = std::clamp<int64_t>(t_i + off, 0, rollout.T - 1);
            if (t != t_i + off) b.offsets_clipped = true;
            if (b.frame_offsets.empty() || b.frame_offsets.back() != t) b.frame_offsets.push_back(t);
        }
        b.ee_pos = rollout.ee_pos.row(t_i);
        b.ee_quat = rollout.ee_quat ? Eigen::Vector4f(rollout.ee_quat->row(t_i))
                                    : Eigen::Vector4f(1.0f, 0.0f, 0.0f, 0.0f);
        b.gripper = rollout.gripper(t_i);
        b.progress = static_cast<double>(t_i) / static_cast<double>(rollout.T - 1);
        b.task_description = task_description;
        b.episode_index = episode_index;
        b.success = rollout.success;
        bundles.push_back(std::move(b));
    }
    return bundles;
}

std::vector<KeyframeBundle> extract_suite_keyframes(const RolloutSet& set, double eta) {
    std::vector<KeyframeBundle> out;
    std::map<std::string, std::string> task_desc;
    for (const auto& t : set.manifest.tasks) task_desc[t.task_id] = t.description;
    int index = 0;
    for (const auto& r : set.rollouts) {
        auto wps = awe_extract(r.ee_pos, eta);
        auto bundles = make_bundles(r, wps, task_desc[r.task_id], index++);
        out.insert(out.end(), bundles.begin(), bundles.end());
    }
    return out;
}

}  // namespace evsae
