#include "evsae/synthworld.hpp"

#include <algorithm>
#include <cmath>

namespace evsae {

namespace {

constexpr int kGateLen = 6;      // movement gates split into 2 steps per axis
constexpr int kAxisSteps = 2;
constexpr int kPulseHalf = 2;    // gripper pulses span +/- 2 around the anchor
constexpr double kGMove = 0.08;  // meters per step per unit latent
constexpr double kGGrip = 0.5;   // gripper delta per step per unit latent
constexpr double kVMax = 0.5;    // per-axis actuator clamp, meters per step
constexpr double kGrabRadius = 0.15;
constexpr double kNoiseFireProb = 0.15;
const Eigen::Vector3d kHome(0.5, 0.5, 0.35);
const Eigen::Vector3d kRetreat(-0.15, -0.1, 0.2);  // offset from target after release

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

// Roles an event latent can play, in assignment priority order: the first
// eleven carry the action commands, extras are pure marker pulses.
struct LatentRole {
    const char* event_type;
    int axis;  // 0..2 movement axis, 3 gripper, -1 marker
};

std::vector<LatentRole> role_table(int64_t n_event) {
    static const LatentRole base[11] = {
        {"approach_start", 0}, {"approach_start", 1}, {"approach_start", 2},
        {"grasp_close", 3},
        {"transport_start", 0}, {"transport_start", 1}, {"transport_start", 2},
        {"release_open", 3},
        {"withdraw", 0}, {"withdraw", 1}, {"withdraw", 2}};
    std::vector<LatentRole> roles;
    for (int64_t i = 0; i < n_event; ++i) {
        if (i < 11) roles.push_back(base[i]);
        else roles.push_back({kEventTypes[static_cast<size_t>((i - 11) % 5)].c_str(), -1});
    }
    return roles;
}

struct EpisodePlan {
    int64_t T = 0;
    std::vector<std::pair<std::string, int64_t>> events;
    Eigen::MatrixXd z_star;  // T x m_true
    Eigen::Vector3d start, source, target;
};

// Scripted latent schedule for one episode. Draw order is fixed so the plan
// is identical across hook conditions sharing a seed.
EpisodePlan make_plan(const WorldConfig& cfg, const TaskSpec& task, int task_idx, Rng& rng) {
    EpisodePlan plan;

    plan.start = kHome + Eigen::Vector3d(rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                                         rng.uniform(-0.08, 0.08));
    plan.source = task.source + Eigen::Vector3d(rng.uniform(-0.03, 0.03),
                                                rng.uniform(-0.03, 0.03), 0.0);
    // placement height varies per episode, so every transport axis carries a
    // per-episode displacement
    plan.target = task.target + Eigen::Vector3d(rng.uniform(-0.03, 0.03),
                                                rng.uniform(-0.03, 0.03),
                                                rng.uniform(-0.05, 0.05));

    const int64_t t_a = 3 + static_cast<int64_t>(rng.below(3));
    const int64_t arrive_src = t_a + kGateLen;
    const int64_t t_g = arrive_src + 1 + static_cast<int64_t>(rng.below(2));
    const int64_t t_t = t_g + 3 + static_cast<int64_t>(rng.below(2));
    const int64_t arrive_tgt = t_t + kGateLen;
    const int64_t t_r = arrive_tgt + 1 + static_cast<int64_t>(rng.below(2));
    const int64_t t_w = t_r + 3 + static_cast<int64_t>(rng.below(2));
    plan.T = t_w + kGateLen + 4 + static_cast<int64_t>(rng.below(3));
    if (plan.T > cfg.T_max)
        throw InvalidConfig("T_max too small for the scripted plan (need >= " +
                            std::to_string(plan.T) + ")");
    plan.events = {{"approach_start", t_a},
                   {"grasp_close", t_g},
                   {"transport_start", t_t},
                   {"release_open", t_r},
                   {"withdraw", t_w}};

    plan.z_star = Eigen::MatrixXd::Zero(plan.T, cfg.m_true());

    // movement amplitudes realize the needed displacement; 5% jitter keeps
    // landings inside the grab radius. Gripper pulses get wide amplitude
    // spread: every unattenuated draw still (un)latches the gripper, but the
    // crossing point under partial suppression varies per episode.
    const double move_jitter = 1.0 + rng.uniform(-0.05, 0.05);
    double grasp_amp = 1.0 + rng.uniform(-0.5, 0.5);
    const double release_amp = 1.0 + rng.uniform(-0.5, 0.5);
    if (cfg.grasp_failure_rate > 0.0 && rng.uniform() < cfg.grasp_failure_rate)
        grasp_amp *= rng.uniform(0.05, 0.18);  // pulse too weak to close the gripper

    const int64_t block =
        cfg.task_private_features ? static_cast<int64_t>(task_idx) * cfg.n_event_features : 0;
    const auto roles = role_table(cfg.n_event_features);

    std::map<std::string, Eigen::Vector3d> displacement = {
        {"approach_start", plan.source - plan.start},
        {"transport_start", plan.target - plan.source},
        {"withdraw", kRetreat}};
    std::map<std::string, int64_t> anchors;
    for (const auto& [type, t] : plan.events) anchors[type] = t;

    // one axis at a time inside each gate, so axis latents decorrelate
    auto put_axis_burst = [&](int64_t latent, int64_t gate_start, int axis, double amp) {
        const int64_t t0 = gate_start + axis * kAxisSteps;
        for (int64_t t = t0; t < t0 + kAxisSteps && t < plan.T; ++t)
            plan.z_star(t, latent) = amp;
    };
    auto put_pulse = [&](int64_t latent, int64_t tc, double amp) {
        for (int64_t delta = -kPulseHalf; delta <= kPulseHalf; ++delta) {
            const int64_t t = tc + delta;
            if (t >= 0 && t < plan.T)
                plan.z_star(t, latent) =
                    amp * (1.0 - std::abs(static_cast<double>(delta)) / (kPulseHalf + 1.0));
        }
    };

    for (int64_t i = 0; i < cfg.n_event_features; ++i) {
        const LatentRole& role = roles[static_cast<size_t>(i)];
        const int64_t latent = block + i;
        const int64_t anchor = anchors[role.event_type];
        if (role.axis >= 0 && role.axis < 3) {
            const double delta_axis = displacement[role.event_type](role.axis);
            const double amp =
                delta_axis / (kAxisSteps * kGMove * cfg.causal_gain) * move_jitter;
            put_axis_burst(latent, anchor, role.axis, amp);
        } else if (role.axis == 3) {
            put_pulse(latent, anchor,
                      std::string(role.event_type) == "grasp_close" ? grasp_amp : release_amp);
        } else {
            put_pulse(latent, anchor, 1.0);  // marker
        }
    }

    // tonic latents stay active all episode; independent slow waves keep the
    // tonic subspace identifiable for the SAE
    // sub-cycle waves: slow enough that in-window drift stays far below any
    // event-template projection, varied enough to keep the directions apart
    const int64_t tonic_base =
        cfg.n_event_features * (cfg.task_private_features ? cfg.n_tasks : 1);
    for (int64_t i = 0; i < cfg.n_tonic_features; ++i) {
        const double level = 1.0 + rng.uniform(-0.5, 0.5);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double cycles = 0.3 + rng.uniform(0.0, 0.4);
        for (int64_t t = 0; t < plan.T; ++t)
            plan.z_star(t, tonic_base + i) =
                level + 0.15 * std::sin(phase + 2.0 * M_PI * cycles * static_cast<double>(t) /
                                                    static_cast<double>(plan.T));
    }

    const int64_t noise_base = tonic_base + cfg.n_tonic_features;
    for (int64_t i = 0; i < cfg.n_noise_features; ++i)
        for (int64_t t = 0; t < plan.T; ++t)
            if (rng.uniform() < kNoiseFireProb)
                plan.z_star(t, noise_base + i) = rng.uniform(0.2, 0.5);

    return plan;
}

}  // namespace

std::pair<World, GroundTruth> gen_world(const WorldConfig& config) {
    if (config.n_tasks < 1 || config.episodes_per_task < 1)
        throw InvalidConfig("gen_world: need at least one task and one episode per task");
    if (config.d < 4) throw InvalidConfig("gen_world: hidden dim d must be >= 4");
    if (config.causal_gain <= 0.0) throw InvalidConfig("gen_world: causal_gain must be positive");
    if (config.m_true() < 1) throw InvalidConfig("gen_world: no planted latents configured");
    if (config.n_event_features < 0 || config.n_tonic_features < 0 || config.n_noise_features < 0)
        throw InvalidConfig("gen_world: feature counts must be nonnegative");
    if (config.T_max < 60) throw InvalidConfig("gen_world: T_max must be >= 60");

    World world;
    world.config = config;
    world.home = kHome;

    Rng rng(mix_seed(config.seed, 0x57A6E5ULL));
    const int64_t d = config.d;
    const int64_t m_true = config.m_true();

    // sources on the table at the left, targets on a raised platform at the
    // right; the boxes keep every commanded axis displacement single-signed
    for (int i = 0; i < config.n_tasks; ++i) {
        TaskSpec task;
        task.task_id = "task" + std::to_string(i);
        task.source = Eigen::Vector3d(rng.uniform(0.15, 0.35), rng.uniform(0.25, 0.35), 0.05);
        task.target = Eigen::Vector3d(rng.uniform(0.60, 0.85), rng.uniform(0.62, 0.72), 0.30);
        task.description = format("pick the object at (%.2f, %.2f) and place it at (%.2f, %.2f)",
                                  task.source.x(), task.source.y(), task.target.x(), task.target.y());
        world.tasks.push_back(std::move(task));
    }

    // generative decoder: random unit columns
    GroundTruth& truth = world.truth;
    truth.D_true.resize(d, m_true);
    for (int64_t c = 0; c < m_true; ++c) {
        Eigen::VectorXd col(d);
        for (int64_t r = 0; r < d; ++r) col(r) = rng.normal();
        truth.D_true.col(c) = col / col.norm();
    }

    // fixed mixing rotation between the two hook layers
    Eigen::MatrixXd G(d, d);
    for (int64_t r = 0; r < d; ++r)
        for (int64_t c = 0; c < d; ++c) G(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    world.rotation = qr.householderQ();

    world.decode_early =
        truth.D_true.completeOrthogonalDecomposition().pseudoInverse();  // m_true x d

    truth.planted_directions[kEarlyLayer] = truth.D_true;
    truth.planted_directions[kLateLayer] = world.rotation * truth.D_true;

    // latent bookkeeping and the action gain matrix
    const int n_blocks = config.task_private_features ? config.n_tasks : 1;
    const auto roles = role_table(config.n_event_features);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Zero(4, m_true);
    for (int b = 0; b < n_blocks; ++b) {
        for (int64_t i = 0; i < config.n_event_features; ++i) {
            const int64_t latent = static_cast<int64_t>(b) * config.n_event_features + i;
            const LatentRole& role = roles[static_cast<size_t>(i)];
            PlantedEvent ev;
            ev.event_type = role.event_type;
            ev.latent = latent;
            ev.task = config.task_private_features ? b : -1;
            ev.actuates = role.axis >= 0;
            if (role.axis >= 0 && role.axis < 3)
                gains(role.axis, latent) = kGMove * config.causal_gain;
            else if (role.axis == 3)
                gains(3, latent) = (ev.event_type == "grasp_close" ? -kGGrip : kGGrip) *
                                   config.causal_gain;
            truth.planted_events.push_back(ev);
            truth.event_indices.push_back(latent);
            const std::string key = config.task_private_features
                                        ? "task" + std::to_string(b) + "/" + ev.event_type
                                        : ev.event_type;
            truth.event_feature_map[key].push_back(latent);
        }
    }
    const int64_t tonic_base = static_cast<int64_t>(n_blocks) * config.n_event_features;
    for (int64_t i = 0; i < config.n_tonic_features; ++i) truth.tonic_indices.push_back(tonic_base + i);
    for (int64_t i = 0; i < config.n_noise_features; ++i)
        truth.noise_indices.push_back(tonic_base + config.n_tonic_features + i);

    truth.readout = gains * world.decode_early * world.rotation.transpose();  // 4 x d

    // calibrate the absolute noise level against the clean signal RMS
    double sq_sum = 0.0;
    int64_t rows = 0;
    for (int i = 0; i < config.n_tasks; ++i) {
        Rng probe(mix_seed(config.seed, 0xCA1B ^ static_cast<uint64_t>(i)));
        EpisodePlan plan = make_plan(config, world.tasks[static_cast<size_t>(i)], i, probe);
        const Eigen::MatrixXd X = plan.z_star * truth.D_true.transpose();
        sq_sum += X.squaredNorm();
        rows += plan.T;
    }
    const double rms = std::sqrt(sq_sum / (static_cast<double>(rows) * static_cast<double>(d)));
    world.noise_stddev = config.noise_sigma * rms;

    return {world, world.truth};
}

EpisodeResult run_episode(const World& world, int task_idx, const StateHook* hook,
                          uint64_t episode_seed) {
    const WorldConfig& cfg = world.config;
    if (task_idx < 0 || task_idx >= cfg.n_tasks)
        throw InvalidConfig("run_episode: task index out of range");
    const TaskSpec& task = world.tasks[static_cast<size_t>(task_idx)];

    Rng rng(mix_seed(mix_seed(cfg.seed, episode_seed), static_cast<uint64_t>(task_idx)));
    EpisodePlan plan = make_plan(cfg, task, task_idx, rng);
    const int64_t T = plan.T;
    const int64_t d = cfg.d;

    EpisodeResult result;
    result.events = plan.events;
    result.source_pos = plan.source.cast<float>();
    result.target_pos = plan.target.cast<float>();

    Rollout& ro = result.rollout;
    ro.episode_id = "t" + std::to_string(task_idx) + "_s" + std::to_string(episode_seed);
    ro.task_id = task.task_id;
    ro.T = T;
    ro.ee_pos.resize(T, 3);
    ro.gripper.resize(T);
    Eigen::MatrixXf quat(T, 4);
    Eigen::MatrixXf acts_early(T, d), acts_late(T, d);
    result.obj_pos.resize(T, 3);

    Eigen::Vector3d pos = plan.start;
    Eigen::Vector3d obj = plan.source;
    double grip = 1.0;
    bool attached = false;

    for (int64_t t = 0; t < T; ++t) {
        Eigen::VectorXd noise(d);
        for (int64_t i = 0; i < d; ++i) noise(i) = rng.normal(0.0, world.noise_stddev);
        Eigen::VectorXd x_early = world.truth.D_true * plan.z_star.row(t).transpose() + noise;

        if (hook && hook->layer == kEarlyLayer) {
            Eigen::VectorXd edited = hook->fn(x_early);
            if (edited.size() != d) throw HookShapeMismatch("hook returned wrong state dimension");
            x_early = edited;
        }
        Eigen::VectorXd x_late = world.rotation * x_early;
        if (hook && hook->layer == kLateLayer) {
            Eigen::VectorXd edited = hook->fn(x_late);
            if (edited.size() != d) throw HookShapeMismatch("hook returned wrong state dimension");
            x_late = edited;
        }

        ro.ee_pos.row(t) = pos.cast<float>();
        ro.gripper(t) = static_cast<float>(grip);
        quat.row(t) << 1.0f, 0.0f, 0.0f, 0.0f;
        acts_early.row(t) = x_early.cast<float>();
        acts_late.row(t) = x_late.cast<float>();
        result.obj_pos.row(t) = obj.cast<float>();

        const Eigen::Vector4d action = world.truth.readout * x_late;
        for (int a = 0; a < 3; ++a) pos(a) += std::clamp(action(a), -kVMax, kVMax);
        pos.x() = std::clamp(pos.x(), 0.0, 1.0);
        pos.y() = std::clamp(pos.y(), 0.0, 1.0);
        pos.z() = std::clamp(pos.z(), 0.0, 0.5);
        grip = std::clamp(grip + action(3), 0.0, 1.0);

        if (attached) obj = pos;
        if (!attached && grip < 0.5 && (pos - obj).norm() <= kGrabRadius) {
            attached = true;
            obj = pos;
        } else if (attached && grip > 0.5) {
            attached = false;
        }
    }

    ro.ee_quat = quat;
    ro.activations[kEarlyLayer] = acts_early;
    ro.activations[kLateLayer] = acts_late;

    result.success = (obj - plan.target).norm() <= cfg.success_radius;
    ro.success = result.success;
    return result;
}

std::vector<EpisodeResult> run_episodes(const World& world, int n_episodes, uint64_t seed,
                                        const StateHook* hook) {
    std::vector<EpisodeResult> out;
    out.reserve(static_cast<size_t>(n_episodes));
    for (int i = 0; i < n_episodes; ++i)
        out.push_back(run_episode(world, i % world.config.n_tasks, hook, seed + static_cast<uint64_t>(i)));
    return out;
}

double baseline_sr(const World& world, int n_episodes, uint64_t seed) {
    if (n_episodes < 1) throw InvalidConfig("baseline_sr: n_episodes must be >= 1");
    int wins = 0;
    for (int i = 0; i < n_episodes; ++i)
        if (run_episode(world, i % world.config.n_tasks, nullptr, seed + static_cast<uint64_t>(i)).success)
            ++wins;
    return static_cast<double>(wins) / static_cast<double>(n_episodes);
}

double oracle_precision(const std::vector<int64_t>& top_features, const GroundTruth& truth,
                        const Eigen::MatrixXd& sae_decoder, int layer) {
    if (top_features.empty()) return 0.0;
    const Eigen::MatrixXd& planted = truth.planted_directions.at(layer);
    std::vector<bool> is_event(static_cast<size_t>(planted.cols()), false);
    for (int64_t idx : truth.event_indices) is_event[static_cast<size_t>(idx)] = true;

    int hits = 0;
    for (int64_t f : top_features) {
        const Eigen::VectorXd col = sae_decoder.col(f);
        const double cn = col.norm();
        if (cn == 0.0) continue;
        double best = -1.0;
        int64_t best_j = -1;
        for (int64_t j = 0; j < planted.cols(); ++j) {
            const double c = std::abs(col.dot(planted.col(j))) / (cn * planted.col(j).norm());
            if (c > best) {
                best = c;
                best_j = j;
            }
        }
        if (best_j >= 0 && is_event[static_cast<size_t>(best_j)] && best >= 0.5) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(top_features.size());
}

Eigen::VectorXd scene_feature(const Eigen::Vector3d& ee_pos, const Eigen::Vector3d& obj_pos,
                              const Eigen::Vector3d& target_pos, double gripper) {
    static const Eigen::MatrixXd projection = [] {
        Rng rng(0xFEA7C0DEULL);
        Eigen::MatrixXd F(kSceneFeatureDim, 10);
        for (int r = 0; r < kSceneFeatureDim; ++r)
            for (int c = 0; c < 10; ++c) F(r, c) = rng.normal();
        return F;
    }();

    // bearing + saturating proximity for object and target, plus gripper
    // state; near-contact bearings zero out instead of swinging wildly
    const Eigen::Vector3d to_obj = obj_pos - ee_pos;
    const Eigen::Vector3d to_tgt = target_pos - ee_pos;
    const double d_obj = to_obj.norm(), d_tgt = to_tgt.norm();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(10);
    if (d_obj > 0.02) g.segment<3>(0) = to_obj / d_obj;
    if (d_tgt > 0.02) g.segment<3>(3) = to_tgt / d_tgt;
    g(6) = std::tanh(d_obj / 0.15);
    g(7) = std::tanh(d_tgt / 0.15);
    g(8) = 2.0 * gripper - 1.0;
    g(9) = (d_obj < 0.02 && gripper < 0.5) ? 1.0 : -1.0;  // holding the object
    return projection * g;
}

}  // namespace evsae
