#include "evsae/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evsae {

std::string intervention_mode_name(InterventionMode mode) {
    switch (mode) {
        case InterventionMode::kLatentScale: return "latent_scale";
        case InterventionMode::kReconOnly: return "recon_only";
        case InterventionMode::kDecoderAdd: return "decoder_add";
        case InterventionMode::kJointDropout: return "joint_dropout";
    }
    return "unknown";
}

Eigen::VectorXd latent_edit(const SaeParams& params, const Eigen::VectorXd& x,
                            const std::vector<int64_t>& S, double alpha, EncodeMode mode) {
    if (alpha == 1.0 || S.empty()) return x;  // identity edit
    for (int64_t f : S)
        if (f < 0 || f >= params.m())
            throw IndexOutOfRange("latent_edit: feature " + std::to_string(f) + " outside [0, m)");

    const Eigen::VectorXd z = encode_state(params, x, mode);
    bool any = false;
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(params.d());
    for (int64_t f : S) {
        const double coeff = (alpha - 1.0) * z(f);
        if (coeff == 0.0) continue;
        delta += coeff * params.W_dec.col(f);
        any = true;
    }
    if (!any) return x;  // scaling zeros changes nothing
    return x + delta / params.input_scale;
}

Eigen::VectorXd recon_hook(const SaeParams& params, const Eigen::VectorXd& x, EncodeMode mode) {
    const Eigen::VectorXd z = encode_state(params, x, mode);
    return (params.W_dec * z + params.b_dec) / params.input_scale;
}

namespace {

EditDiagnostics fill_diagnostics(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                                 const Eigen::VectorXd& direction, double update_norm) {
    const double nx = x.norm();
    if (nx == 0.0) throw ZeroState("decoder_add: cosines undefined for a zero state");
    EditDiagnostics diag;
    diag.norm_x = nx;
    diag.norm_x_prime = x_prime.norm();
    diag.rel_update = update_norm / nx;
    const double nd = direction.norm();
    diag.c_before = nd > 0.0 ? x.dot(direction) / (nx * nd) : 0.0;
    diag.c_after = nd > 0.0 && diag.norm_x_prime > 0.0
                       ? x_prime.dot(direction) / (diag.norm_x_prime * nd)
                       : 0.0;
    return diag;
}

}  // namespace

std::pair<Eigen::VectorXd, EditDiagnostics> decoder_add(const SaeParams& params,
                                                        const Eigen::VectorXd& x, int64_t i,
                                                        double alpha) {
    if (i < 0 || i >= params.m())
        throw IndexOutOfRange("decoder_add: feature " + std::to_string(i) + " outside [0, m)");
    const Eigen::VectorXd d_i = params.W_dec.col(i);
    const Eigen::VectorXd update = alpha * d_i;
    const Eigen::VectorXd x_prime = x + update;
    return {x_prime, fill_diagnostics(x, x_prime, d_i, update.norm())};
}

std::pair<Eigen::VectorXd, EditDiagnostics> decoder_add_random_control(const SaeParams& params,
                                                                       const Eigen::VectorXd& x,
                                                                       int64_t i, double alpha,
                                                                       uint64_t seed) {
    const double update_norm = std::abs(alpha) * params.W_dec.col(i).norm();
    Rng rng(seed);
    Eigen::VectorXd r(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) r(j) = rng.normal();
    r /= r.norm();
    const Eigen::VectorXd x_prime = x + update_norm * r;
    return {x_prime, fill_diagnostics(x, x_prime, r, update_norm)};
}

StateHook make_hook(const SaeParams& params, const InterventionSpec& spec,
                    const std::vector<int64_t>& features) {
    StateHook hook;
    hook.layer = spec.layer;
    switch (spec.mode) {
        case InterventionMode::kLatentScale:
        case InterventionMode::kJointDropout:
            hook.fn = [&params, features, alpha = spec.alpha, mode = spec.encode](
                          const Eigen::VectorXd& x) {
                return latent_edit(params, x, features, alpha, mode);
            };
            break;
        case InterventionMode::kReconOnly:
            hook.fn = [&params, mode = spec.encode](const Eigen::VectorXd& x) {
                return recon_hook(params, x, mode);
            };
            break;
        case InterventionMode::kDecoderAdd:
            hook.fn = [&params, f = features.at(0), alpha = spec.alpha](const Eigen::VectorXd& x) {
                return decoder_add(params, x, f, alpha).first;
            };
            break;
    }
    return hook;
}

namespace {

void validate_spec(const InterventionSpec& spec) {
    if (spec.alpha < 0.0) throw InvalidConfig("intervention: alpha must be >= 0");
    if (spec.episodes_per_condition < 1)
        throw InvalidConfig("intervention: episodes_per_condition must be >= 1");
    switch (spec.mode) {
        case InterventionMode::kLatentScale:
        case InterventionMode::kJointDropout:
            if (spec.features.empty())
                throw InvalidConfig(intervention_mode_name(spec.mode) +
                                    " requires a nonempty feature set");
            break;
        case InterventionMode::kDecoderAdd:
            if (spec.features.size() != 1)
                throw InvalidConfig("decoder_add requires exactly one feature");
            break;
        case InterventionMode::kReconOnly:
            break;
    }
}

InterventionOutcome run_condition(const World& world, const SaeParams& params,
                                  const InterventionSpec& spec,
                                  const std::vector<int64_t>& features, double baseline) {
    const StateHook hook = make_hook(params, spec, features);
    InterventionOutcome outcome;
    outcome.per_episode.reserve(static_cast<size_t>(spec.episodes_per_condition));

    // diagnostics accumulate across every hooked step for decoder_add
    int64_t diag_steps = 0;
    EditDiagnostics accum;
    StateHook measured = hook;
    if (spec.mode == InterventionMode::kDecoderAdd) {
        measured.fn = [&](const Eigen::VectorXd& x) {
            auto [x_prime, diag] = decoder_add(params, x, features.at(0), spec.alpha);
            accum.rel_update += diag.rel_update;
            accum.c_before += diag.c_before;
            accum.c_after += diag.c_after;
            accum.norm_x += diag.norm_x;
            accum.norm_x_prime += diag.norm_x_prime;
            ++diag_steps;
            return x_prime;
        };
    }

    int wins = 0;
    for (int i = 0; i < spec.episodes_per_condition; ++i) {
        const auto result = run_episode(world, i % world.config.n_tasks, &measured,
                                        spec.seed + static_cast<uint64_t>(i));
        outcome.per_episode.push_back(result.success);
        if (result.success) ++wins;
    }
    outcome.sr = static_cast<double>(wins) / static_cast<double>(spec.episodes_per_condition);
    outcome.delta_sr = 100.0 * (outcome.sr - baseline);
    if (diag_steps > 0) {
        const double n = static_cast<double>(diag_steps);
        accum.rel_update /= n;
        accum.c_before /= n;
        accum.c_after /= n;
        accum.norm_x /= n;
        accum.norm_x_prime /= n;
        outcome.diagnostics = accum;
    }
    return outcome;
}

}  // namespace

CampaignResult run_intervention(const World& world, const SaeParams& params,
                                const InterventionSpec& spec, double baseline) {
    validate_spec(spec);
    CampaignResult result;

    const bool per_feature = spec.mode == InterventionMode::kLatentScale ||
                             spec.mode == InterventionMode::kDecoderAdd;
    if (per_feature) {
        for (int64_t f : spec.features) {
            InterventionOutcome outcome = run_condition(world, params, spec, {f}, baseline);
            outcome.feature = f;
            result.per_feature.push_back(std::move(outcome));
        }
    } else {
        result.per_feature.push_back(run_condition(world, params, spec, spec.features, baseline));
    }

    double sr_sum = 0.0;
    for (const auto& o : result.per_feature) sr_sum += o.sr;
    result.mean.sr = sr_sum / static_cast<double>(result.per_feature.size());
    result.mean.delta_sr = 100.0 * (result.mean.sr - baseline);
    return result;
}

DoseResponseCurve alpha_sweep(const World& world, const SaeParams& params,
                              const InterventionSpec& base_spec,
                              const std::vector<double>& alpha_grid, double baseline,
                              const std::string& ranking_label) {
    if (alpha_grid.size() < 2) throw InvalidConfig("alpha_sweep: grid needs at least two points");
    for (size_t i = 1; i < alpha_grid.size(); ++i)
        if (alpha_grid[i] <= alpha_grid[i - 1])
            throw InvalidConfig("alpha_sweep: grid must be strictly increasing");
    if (alpha_grid.front() != 0.0 || alpha_grid.back() != 1.0)
        throw InvalidConfig("alpha_sweep: grid must include the endpoints 0 and 1");

    DoseResponseCurve curve;
    curve.layer = base_spec.layer;
    curve.ranking_label = ranking_label;
    for (double alpha : alpha_grid) {
        InterventionSpec spec = base_spec;
        spec.alpha = alpha;
        const CampaignResult r = run_intervention(world, params, spec, baseline);
        curve.alphas.push_back(alpha);
        curve.sr_at_alpha.push_back(r.mean.sr);
    }
    return curve;
}

JointDropoutResult joint_dropout(const World& world, const SaeParams& params, int layer,
                                 int64_t n_features, const std::vector<int64_t>& alive,
                                 const std::vector<uint64_t>& seeds, int episodes_per_condition,
                                 uint64_t episode_seed, double baseline) {
    if (static_cast<int64_t>(alive.size()) < n_features)
        throw InsufficientAliveFeatures("joint_dropout: " + std::to_string(alive.size()) +
                                        " alive features, need " + std::to_string(n_features));
    JointDropoutResult result;
    for (uint64_t seed : seeds) {
        InterventionSpec spec;
        spec.mode = InterventionMode::kJointDropout;
        spec.layer = layer;
        spec.alpha = 0.0;
        spec.episodes_per_condition = episodes_per_condition;
        spec.seed = episode_seed;
        if (n_features == 0) {
            spec.features = {};  // identity: no features touched
            InterventionOutcome outcome;
            const double sr = baseline_sr(world, episodes_per_condition, episode_seed);
            outcome.sr = sr;
            outcome.delta_sr = 100.0 * (sr - baseline);
            result.per_seed.push_back(outcome);
            continue;
        }
        Rng rng(seed);
        spec.features = rng.sample(alive, static_cast<size_t>(n_features));
        std::sort(spec.features.begin(), spec.features.end());
        result.per_seed.push_back(run_intervention(world, params, spec, baseline).per_feature.at(0));
    }

    double mean = 0.0;
    for (const auto& o : result.per_seed) mean += o.sr;
    mean /= static_cast<double>(result.per_seed.size());
    double var = 0.0;
    for (const auto& o : result.per_seed) var += (o.sr - mean) * (o.sr - mean);
    var /= static_cast<double>(result.per_seed.size());
    result.mean_sr = mean;
    result.std_sr = std::sqrt(var);
    return result;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw Error("spearman_rho: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) throw Error("spearman_rho: a series is constant");
    return cov / std::sqrt(vx * vy);
}

}  // namespace evsae
