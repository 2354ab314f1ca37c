#include "evsae/rollout.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "evsae/tensor_io.hpp"

namespace evsae {

using nlohmann::json;

bool Rollout::operator==(const Rollout& other) const {
    if (episode_id != other.episode_id || task_id != other.task_id ||
        success != other.success || T != other.T)
        return false;
    if (ee_pos != other.ee_pos || gripper != other.gripper) return false;
    if (ee_quat.has_value() != other.ee_quat.has_value()) return false;
    if (ee_quat && *ee_quat != *other.ee_quat) return false;
    if (activations.size() != other.activations.size()) return false;
    for (const auto& [layer, acts] : activations) {
        auto it = other.activations.find(layer);
        if (it == other.activations.end() || acts != it->second) return false;
    }
    return true;
}

const Rollout& RolloutSet::by_episode(const std::string& episode_id) const {
    for (const auto& r : rollouts)
        if (r.episode_id == episode_id) return r;
    throw Error("unknown episode: " + episode_id);
}

int RolloutSet::n_episodes_in_task(const std::string& task_id) const {
    int n = 0;
    for (const auto& e : manifest.episodes)
        if (e.task_id == task_id) ++n;
    return n;
}

RolloutManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("missing manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("manifest parse error in " + path.string() + ": " + e.what());
    }

    RolloutManifest m;
    m.suite_id = j.at("suite_id").get<std::string>();
    for (const auto& t : j.at("tasks"))
        m.tasks.push_back({t.at("task_id").get<std::string>(), t.at("description").get<std::string>()});
    std::set<std::string> task_ids;
    for (const auto& t : m.tasks) task_ids.insert(t.task_id);

    std::set<std::string> episode_ids;
    for (const auto& e : j.at("episodes")) {
        EpisodeInfo info;
        info.episode_id = e.at("episode_id").get<std::string>();
        info.task_id = e.at("task_id").get<std::string>();
        info.success = e.at("success").get<bool>();
        info.length_T = e.at("length_T").get<int64_t>();
        info.data_path = e.at("data_path").get<std::string>();
        if (!task_ids.count(info.task_id))
            throw ShapeMismatch("episode " + info.episode_id + " references unknown task " + info.task_id);
        if (!episode_ids.insert(info.episode_id).second)
            throw ShapeMismatch("duplicate episode_id " + info.episode_id);
        if (info.length_T < 2)
            throw ShapeMismatch("episode " + info.episode_id + " has length_T < 2");
        m.episodes.push_back(std::move(info));
    }
    return m;
}

void write_manifest(const RolloutManifest& manifest, const std::filesystem::path& path) {
    json j;
    j["suite_id"] = manifest.suite_id;
    j["tasks"] = json::array();
    for (const auto& t : manifest.tasks)
        j["tasks"].push_back({{"task_id", t.task_id}, {"description", t.description}});
    j["episodes"] = json::array();
    for (const auto& e : manifest.episodes)
        j["episodes"].push_back({{"episode_id", e.episode_id},
                                 {"task_id", e.task_id},
                                 {"success", e.success},
                                 {"length_T", e.length_T},
                                 {"data_path", e.data_path}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
}

namespace {

std::string acts_filename(int layer) { return "acts_layer" + std::to_string(layer) + ".bin"; }

void check_finite(const Eigen::MatrixXf& m, const std::string& episode_id, int layer) {
    for (Eigen::Index t = 0; t < m.rows(); ++t)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            if (!std::isfinite(m(t, c)))
                throw NonFiniteActivation("non-finite activation in episode " + episode_id +
                                          " at timestep " + std::to_string(t) + ", layer " +
                                          std::to_string(layer));
}

void validate_rollout(const Rollout& r) {
    const auto& id = r.episode_id;
    if (r.T < 2) throw ShapeMismatch(id + ": T must be >= 2");
    if (r.ee_pos.rows() != r.T || r.ee_pos.cols() != 3)
        throw ShapeMismatch(id + ": ee_pos must be T x 3 (declared T=" + std::to_string(r.T) +
                            ", got " + std::to_string(r.ee_pos.rows()) + " rows)");
    if (r.gripper.size() != r.T)
        throw ShapeMismatch(id + ": gripper length " + std::to_string(r.gripper.size()) +
                            " != T=" + std::to_string(r.T));
    if (r.ee_quat) {
        if (r.ee_quat->rows() != r.T || r.ee_quat->cols() != 4)
            throw ShapeMismatch(id + ": ee_quat must be T x 4");
        for (Eigen::Index t = 0; t < r.T; ++t) {
            const double n = r.ee_quat->row(t).cast<double>().norm();
            if (std::abs(n - 1.0) > 1e-6)
                throw ShapeMismatch(id + ": non-unit quaternion at timestep " + std::to_string(t));
        }
    }
    for (const auto& [layer, acts] : r.activations) {
        if (acts.rows() != r.T)
            throw ShapeMismatch(id + ": activations at layer " + std::to_string(layer) + " have " +
                                std::to_string(acts.rows()) + " rows, expected T=" + std::to_string(r.T));
        check_finite(acts, id, layer);
    }
}

}  // namespace

void write_rollout(const Rollout& rollout, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::vector<std::pair<std::string, TensorRecord>> traj;
    traj.emplace_back("ee_pos", to_record(rollout.ee_pos));
    if (rollout.ee_quat) traj.emplace_back("ee_quat", to_record(*rollout.ee_quat));
    traj.emplace_back("gripper", to_record(rollout.gripper));
    write_tensor_file(dir / "traj.bin", traj);

    for (const auto& [layer, acts] : rollout.activations) {
        // stored with a reserved token axis: [T, n_tokens, d], one token here
        TensorRecord rec;
        rec.dims = {static_cast<uint64_t>(acts.rows()), 1, static_cast<uint64_t>(acts.cols())};
        rec.data.resize(static_cast<size_t>(acts.size()));
        for (Eigen::Index t = 0; t < acts.rows(); ++t)
            for (Eigen::Index c = 0; c < acts.cols(); ++c)
                rec.data[static_cast<size_t>(t * acts.cols() + c)] = acts(t, c);
        write_tensor_file(dir / acts_filename(layer), {{"acts", rec}});
    }
}

Rollout read_rollout(const std::filesystem::path& dir, const std::string& episode_id,
                     const std::string& task_id, bool success) {
    Rollout r;
    r.episode_id = episode_id.empty() ? dir.filename().string() : episode_id;
    r.task_id = task_id;
    r.success = success;

    TensorFile traj = read_tensor_file(dir / "traj.bin");
    auto pos_it = traj.find("ee_pos");
    auto grip_it = traj.find("gripper");
    if (pos_it == traj.end() || grip_it == traj.end())
        throw ShapeMismatch(r.episode_id + ": traj.bin missing ee_pos or gripper record");
    r.ee_pos = record_to_matrix(pos_it->second);
    r.gripper = record_to_vector(grip_it->second);
    if (auto quat_it = traj.find("ee_quat"); quat_it != traj.end())
        r.ee_quat = record_to_matrix(quat_it->second);
    r.T = r.ee_pos.rows();

    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("acts_layer", 0) != 0) continue;
        const int layer = std::stoi(name.substr(10, name.size() - 10 - 4));
        TensorFile f = read_tensor_file(entry.path());
        const TensorRecord& rec = f.at("acts");
        Eigen::MatrixXf acts;
        if (rec.dims.size() == 3) {
            if (rec.dims[1] != 1)
                throw ShapeMismatch(r.episode_id + ": multi-token activation logs (" +
                                    std::to_string(rec.dims[1]) +
                                    " tokens/step) require an ingesting adapter");
            acts.resize(static_cast<Eigen::Index>(rec.dims[0]), static_cast<Eigen::Index>(rec.dims[2]));
        } else if (rec.dims.size() == 2) {
            acts.resize(static_cast<Eigen::Index>(rec.dims[0]), static_cast<Eigen::Index>(rec.dims[1]));
        } else {
            throw ShapeMismatch(r.episode_id + ": activation tensor must be rank 2 or 3");
        }
        for (Eigen::Index t = 0; t < acts.rows(); ++t)
            for (Eigen::Index c = 0; c < acts.cols(); ++c)
                acts(t, c) = rec.data[static_cast<size_t>(t * acts.cols() + c)];
        r.activations[layer] = std::move(acts);
    }
    return r;
}

RolloutSet ingest(const std::filesystem::path& manifest_path) {
    RolloutSet set;
    set.manifest = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();

    for (const auto& info : set.manifest.episodes) {
        const auto dir = base / info.data_path;
        if (!std::filesystem::exists(dir / "traj.bin"))
            throw MissingFile("episode " + info.episode_id + ": missing " + (dir / "traj.bin").string());
        Rollout r = read_rollout(dir, info.episode_id, info.task_id, info.success);
        if (r.T != info.length_T)
            throw ShapeMismatch(info.episode_id + ": manifest declares T=" +
                                std::to_string(info.length_T) + " but arrays have T=" +
                                std::to_string(r.T));
        validate_rollout(r);
        set.rollouts.push_back(std::move(r));
    }
    return set;
}

ActivationBatch stack_rows(const RolloutSet& set, int layer) {
    int64_t total = 0;
    Eigen::Index d = -1;
    for (const auto& r : set.rollouts) {
        auto it = r.activations.find(layer);
        if (it == r.activations.end())
            throw UnknownLayer("layer " + std::to_string(layer) + " absent from episode " + r.episode_id);
        if (d < 0) d = it->second.cols();
        else if (it->second.cols() != d)
            throw ShapeMismatch("inconsistent activation width at layer " + std::to_string(layer));
        total += it->second.rows();
    }
    if (total == 0) throw Error("no activation rows at layer " + std::to_string(layer));

    ActivationBatch all;
    all.data.resize(total, d);
    all.provenance.reserve(static_cast<size_t>(total));
    int64_t row = 0;
    for (const auto& r : set.rollouts) {
        const auto& acts = r.activations.at(layer);
        for (Eigen::Index t = 0; t < acts.rows(); ++t) {
            all.data.row(row++) = acts.row(t);
            all.provenance.emplace_back(r.episode_id, t);
        }
    }
    return all;
}

std::vector<ActivationBatch> activation_batches(const RolloutSet& set, int layer,
                                                int64_t batch_size, uint64_t seed) {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    ActivationBatch all = stack_rows(set, layer);
    const int64_t n = all.data.rows();

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<ActivationBatch> batches;
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t b = std::min(batch_size, n - start);
        ActivationBatch batch;
        batch.data.resize(b, all.data.cols());
        batch.provenance.reserve(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            const int64_t src = order[static_cast<size_t>(start + i)];
            batch.data.row(i) = all.data.row(src);
            batch.provenance.push_back(all.provenance[static_cast<size_t>(src)]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace evsae
