#include "evsae/sae.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "evsae/tensor_io.hpp"

namespace evsae {

TopKResult batch_topk(const Eigen::MatrixXd& P, int64_t k) {
    if (k <= 0) throw InvalidBudget("batch_topk: k must be positive, got " + std::to_string(k));
    const int64_t B = P.rows(), m = P.cols();
    const int64_t budget = std::min(k * B, B * m);

    struct Entry {
        double value;
        int64_t row, col;
    };
    std::vector<Entry> entries;
    entries.reserve(static_cast<size_t>(B * m));
    for (int64_t r = 0; r < B; ++r)
        for (int64_t c = 0; c < m; ++c) entries.push_back({P(r, c), r, c});

    auto before = [](const Entry& a, const Entry& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.col != b.col) return a.col < b.col;
        return a.row < b.row;
    };
    if (budget < B * m)
        std::nth_element(entries.begin(), entries.begin() + budget, entries.end(), before);

    TopKResult result;
    result.Z = Eigen::MatrixXd::Zero(B, m);
    result.kept.reserve(static_cast<size_t>(budget));
    double cut = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < budget; ++i) {
        const Entry& e = entries[static_cast<size_t>(i)];
        result.Z(e.row, e.col) = std::max(e.value, 0.0);
        result.kept.emplace_back(e.row, e.col);
        cut = std::min(cut, e.value);
    }
    result.min_kept_preact = cut;
    return result;
}

Eigen::MatrixXd preactivations(const SaeParams& params, const Eigen::MatrixXd& H) {
    return ((params.input_scale * H) * params.W_enc.transpose()).rowwise() +
           params.b_enc.transpose();
}

Eigen::MatrixXd encode_rows(const SaeParams& params, const Eigen::MatrixXd& H, EncodeMode mode) {
    Eigen::MatrixXd P = preactivations(params, H);
    switch (mode) {
        case EncodeMode::kTrainBatchTopK:
            return batch_topk(P, params.k).Z;
        case EncodeMode::kInferenceThreshold: {
            Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(P.rows(), P.cols());
            for (Eigen::Index r = 0; r < P.rows(); ++r)
                for (Eigen::Index c = 0; c < P.cols(); ++c)
                    if (P(r, c) > params.theta) Z(r, c) = std::max(P(r, c), 0.0);
            return Z;
        }
        case EncodeMode::kPerRowTopK: {
            Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(P.rows(), P.cols());
            const int64_t k = std::min<int64_t>(params.k, P.cols());
            std::vector<int64_t> idx(static_cast<size_t>(P.cols()));
            for (Eigen::Index r = 0; r < P.rows(); ++r) {
                std::iota(idx.begin(), idx.end(), 0);
                std::nth_element(idx.begin(), idx.begin() + k, idx.end(), [&](int64_t a, int64_t b) {
                    if (P(r, a) != P(r, b)) return P(r, a) > P(r, b);
                    return a < b;
                });
                for (int64_t i = 0; i < k; ++i)
                    Z(r, idx[static_cast<size_t>(i)]) = std::max(P(r, idx[static_cast<size_t>(i)]), 0.0);
            }
            return Z;
        }
    }
    throw Error("unreachable encode mode");
}

Eigen::MatrixXd decode_rows(const SaeParams& params, const Eigen::MatrixXd& Z) {
    return ((Z * params.W_dec.transpose()).rowwise() + params.b_dec.transpose()) /
           params.input_scale;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sae_forward(const SaeParams& params,
                                                        const Eigen::MatrixXd& H,
                                                        EncodeMode mode) {
    Eigen::MatrixXd Z = encode_rows(params, H, mode);
    return {Z, decode_rows(params, Z)};
}

Eigen::VectorXd encode_state(const SaeParams& params, const Eigen::VectorXd& x, EncodeMode mode) {
    if (x.size() != params.d())
        throw ShapeMismatch("encode_state: state has dim " + std::to_string(x.size()) +
                            ", SAE expects " + std::to_string(params.d()));
    if (mode == EncodeMode::kTrainBatchTopK) mode = EncodeMode::kPerRowTopK;  // B = 1
    return encode_rows(params, x.transpose(), mode).row(0);
}

namespace {

// Per-row top-k_aux over dead features, same (value desc, lower index)
// tie-break as the batch rule.
std::vector<std::pair<int64_t, int64_t>> select_aux_support(const Eigen::MatrixXd& P,
                                                            const std::vector<bool>& dead_mask,
                                                            int64_t k_aux) {
    std::vector<int64_t> dead_cols;
    for (int64_t c = 0; c < static_cast<int64_t>(dead_mask.size()); ++c)
        if (dead_mask[static_cast<size_t>(c)]) dead_cols.push_back(c);

    std::vector<std::pair<int64_t, int64_t>> kept;
    if (dead_cols.empty() || k_aux <= 0) return kept;
    const int64_t take = std::min<int64_t>(k_aux, static_cast<int64_t>(dead_cols.size()));
    std::vector<int64_t> cols = dead_cols;
    for (Eigen::Index r = 0; r < P.rows(); ++r) {
        std::sort(cols.begin(), cols.end(), [&](int64_t a, int64_t b) {
            if (P(r, a) != P(r, b)) return P(r, a) > P(r, b);
            return a < b;
        });
        for (int64_t i = 0; i < take; ++i) kept.emplace_back(r, cols[static_cast<size_t>(i)]);
    }
    return kept;
}

Eigen::MatrixXd code_from_support(const Eigen::MatrixXd& P,
                                  const std::vector<std::pair<int64_t, int64_t>>& kept) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    for (const auto& [r, c] : kept) Z(r, c) = std::max(P(r, c), 0.0);
    return Z;
}

// aux codes keep the raw pre-activation: a clamp here would cut the gradient
// that pulls dead features back above zero
Eigen::MatrixXd raw_code_from_support(const Eigen::MatrixXd& P,
                                      const std::vector<std::pair<int64_t, int64_t>>& kept) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    for (const auto& [r, c] : kept) Z(r, c) = P(r, c);
    return Z;
}

struct LossState {
    Eigen::MatrixXd X;   // scaled inputs
    Eigen::MatrixXd P;   // pre-activations
    Eigen::MatrixXd Z;   // main code
    Eigen::MatrixXd Xhat;
    Eigen::MatrixXd Zaux;
    Eigen::MatrixXd R;   // (X - Xhat) - Ehat, empty when no aux support
    bool has_aux = false;
};

LossState forward_with_support(const SaeParams& params, const Eigen::MatrixXd& H,
                               const SaeSupports& supports) {
    LossState st;
    st.X = params.input_scale * H;
    st.P = (st.X * params.W_enc.transpose()).rowwise() + params.b_enc.transpose();
    st.Z = code_from_support(st.P, supports.kept);
    st.Xhat = (st.Z * params.W_dec.transpose()).rowwise() + params.b_dec.transpose();
    st.has_aux = !supports.kept_aux.empty();
    if (st.has_aux) {
        st.Zaux = raw_code_from_support(st.P, supports.kept_aux);
        st.R = (st.X - st.Xhat) - st.Zaux * params.W_dec.transpose();
    }
    return st;
}

SaeLossParts parts_from_state(const LossState& st, double lambda_aux) {
    const double B = static_cast<double>(st.X.rows());
    SaeLossParts parts;
    parts.mse = (st.X - st.Xhat).squaredNorm() / B;
    parts.aux = st.has_aux ? st.R.squaredNorm() / B : 0.0;
    parts.total = parts.mse + lambda_aux * parts.aux;
    return parts;
}

}  // namespace

SaeLossParts sae_loss(const SaeParams& params, const Eigen::MatrixXd& H,
                      const std::vector<bool>& dead_mask, double lambda_aux, int64_t k_aux,
                      SaeSupports* supports_out) {
    Eigen::MatrixXd P = preactivations(params, H);
    SaeSupports supports;
    supports.kept = batch_topk(P, params.k).kept;
    supports.kept_aux = select_aux_support(P, dead_mask, k_aux);
    if (supports_out) *supports_out = supports;
    return parts_from_state(forward_with_support(params, H, supports), lambda_aux);
}

SaeLossParts sae_loss_with_support(const SaeParams& params, const Eigen::MatrixXd& H,
                                   const SaeSupports& supports, double lambda_aux) {
    return parts_from_state(forward_with_support(params, H, supports), lambda_aux);
}

SaeGradients sae_loss_gradients(const SaeParams& params, const Eigen::MatrixXd& H,
                                const SaeSupports& supports, double lambda_aux) {
    const LossState st = forward_with_support(params, H, supports);
    const double B = static_cast<double>(st.X.rows());

    SaeGradients g;
    g.dW_enc = Eigen::MatrixXd::Zero(params.m(), params.d());
    g.db_enc = Eigen::VectorXd::Zero(params.m());
    g.dW_dec = Eigen::MatrixXd::Zero(params.d(), params.m());
    g.db_dec = Eigen::VectorXd::Zero(params.d());

    // mse path
    Eigen::MatrixXd G = (2.0 / B) * (st.Xhat - st.X);
    g.dW_dec += G.transpose() * st.Z;
    g.db_dec += G.colwise().sum().transpose();
    Eigen::MatrixXd dP = Eigen::MatrixXd::Zero(st.P.rows(), st.P.cols());
    {
        Eigen::MatrixXd dZ = G * params.W_dec;
        for (const auto& [r, c] : supports.kept)
            if (st.P(r, c) > 0.0) dP(r, c) += dZ(r, c);
    }

    // aux path: residual target depends on X_hat, so gradients flow through
    // both reconstructions
    if (st.has_aux) {
        Eigen::MatrixXd Ga = (-2.0 * lambda_aux / B) * st.R;
        g.dW_dec += Ga.transpose() * st.Z;      // via X_hat
        g.db_dec += Ga.colwise().sum().transpose();
        g.dW_dec += Ga.transpose() * st.Zaux;   // via E_hat
        Eigen::MatrixXd dZ = Ga * params.W_dec;
        for (const auto& [r, c] : supports.kept)
            if (st.P(r, c) > 0.0) dP(r, c) += dZ(r, c);
        for (const auto& [r, c] : supports.kept_aux) dP(r, c) += dZ(r, c);  // no clamp on aux
    }

    g.dW_enc = dP.transpose() * st.X;
    g.db_enc = dP.colwise().sum().transpose();
    return g;
}

namespace {

double lr_at_step(const SaeTrainConfig& cfg, int64_t step) {
    const double base = cfg.learning_rate;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return base * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    const int64_t decay_start =
        static_cast<int64_t>(cfg.decay_start_fraction * static_cast<double>(cfg.steps));
    if (step >= decay_start && cfg.steps > decay_start)
        return base * static_cast<double>(cfg.steps - step) /
               static_cast<double>(cfg.steps - decay_start);
    return base;
}

struct Adam {
    Eigen::MatrixXd mW_enc, vW_enc, mW_dec, vW_dec;
    Eigen::VectorXd mb_enc, vb_enc, mb_dec, vb_dec;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;

    explicit Adam(const SaeParams& p)
        : mW_enc(Eigen::MatrixXd::Zero(p.W_enc.rows(), p.W_enc.cols())),
          vW_enc(Eigen::MatrixXd::Zero(p.W_enc.rows(), p.W_enc.cols())),
          mW_dec(Eigen::MatrixXd::Zero(p.W_dec.rows(), p.W_dec.cols())),
          vW_dec(Eigen::MatrixXd::Zero(p.W_dec.rows(), p.W_dec.cols())),
          mb_enc(Eigen::VectorXd::Zero(p.b_enc.size())),
          vb_enc(Eigen::VectorXd::Zero(p.b_enc.size())),
          mb_dec(Eigen::VectorXd::Zero(p.b_dec.size())),
          vb_dec(Eigen::VectorXd::Zero(p.b_dec.size())) {}

    template <typename T>
    void update_one(T& param, T& m, T& v, const T& grad, double lr) {
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        param -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
    }

    void step(SaeParams& p, const SaeGradients& g, double lr) {
        ++t;
        update_one(p.W_enc, mW_enc, vW_enc, g.dW_enc, lr);
        update_one(p.b_enc, mb_enc, vb_enc, g.db_enc, lr);
        update_one(p.W_dec, mW_dec, vW_dec, g.dW_dec, lr);
        update_one(p.b_dec, mb_dec, vb_dec, g.db_dec, lr);
    }
};

SaeParams init_params(int64_t d, int64_t m, int64_t k, double input_scale, uint64_t seed) {
    SaeParams p;
    p.k = k;
    p.input_scale = input_scale;
    p.W_dec.resize(d, m);
    Rng rng(seed);
    for (int64_t c = 0; c < m; ++c) {
        Eigen::VectorXd col(d);
        for (int64_t r = 0; r < d; ++r) col(r) = rng.normal();
        p.W_dec.col(c) = col / col.norm();
    }
    p.W_enc = p.W_dec.transpose();
    p.b_enc = Eigen::VectorXd::Zero(m);
    p.b_dec = Eigen::VectorXd::Zero(d);
    return p;
}

}  // namespace

TrainResult train_sae(const SaeTrainConfig& config, const Eigen::MatrixXf& rows) {
    if (rows.rows() == 0) throw Error("train_sae: no activation rows");
    if (config.warmup_steps >= config.steps)
        throw InvalidConfig("train_sae: warmup_steps must be < steps");
    if (config.lambda_aux < 0.0) throw InvalidConfig("train_sae: lambda_aux must be >= 0");

    const int64_t N = rows.rows(), d = rows.cols();
    const int64_t m = config.m > 0 ? config.m : 2 * d;
    if (m < d) throw InvalidConfig("train_sae: dictionary size m must be >= d");
    const int64_t k = config.k;
    const int64_t k_aux = config.k_aux > 0 ? config.k_aux : 2 * k;

    const Eigen::MatrixXd raw = rows.cast<double>();
    double mean_norm = 0.0;
    for (int64_t i = 0; i < N; ++i) mean_norm += raw.row(i).norm();
    mean_norm /= static_cast<double>(N);
    const double input_scale =
        mean_norm > 0.0 ? std::sqrt(static_cast<double>(d)) / mean_norm : 1.0;

    TrainResult result;
    result.params = init_params(d, m, k, input_scale, config.seed);
    SaeParams& params = result.params;
    Adam adam(params);

    Rng shuffler(config.seed + 0x5EED);
    std::vector<int64_t> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    int64_t cursor = N;  // force initial shuffle

    std::vector<int64_t> silent_steps(static_cast<size_t>(m), 0);
    bool theta_initialized = false;
    double theta_ema = 0.0;
    SaeParams last_good = params;

    for (int64_t step = 0; step < config.steps; ++step) {
        const int64_t B = std::min<int64_t>(config.batch_size, N);
        Eigen::MatrixXd batch(B, d);
        for (int64_t i = 0; i < B; ++i) {
            if (cursor >= N) {
                shuffler.shuffle(order);
                cursor = 0;
            }
            batch.row(i) = raw.row(order[static_cast<size_t>(cursor++)]);
        }

        std::vector<bool> dead_mask(static_cast<size_t>(m));
        int64_t dead_count = 0;
        for (int64_t f = 0; f < m; ++f) {
            dead_mask[static_cast<size_t>(f)] =
                silent_steps[static_cast<size_t>(f)] >= config.dead_after_steps;
            if (dead_mask[static_cast<size_t>(f)]) ++dead_count;
        }

        Eigen::MatrixXd P = (input_scale * batch) * params.W_enc.transpose();
        P.rowwise() += params.b_enc.transpose();
        TopKResult topk = batch_topk(P, k);
        SaeSupports supports;
        supports.kept = topk.kept;
        supports.kept_aux = select_aux_support(P, dead_mask, k_aux);

        const SaeLossParts parts = sae_loss_with_support(params, batch, supports, config.lambda_aux);
        if (!std::isfinite(parts.total)) {
            params = last_good;
            result.diverged = true;
            break;
        }
        last_good = params;

        const SaeGradients grads = sae_loss_gradients(params, batch, supports, config.lambda_aux);
        adam.step(params, grads, lr_at_step(config, step));
        for (int64_t c = 0; c < m; ++c) {
            const double n = params.W_dec.col(c).norm();
            if (n > 0.0) params.W_dec.col(c) /= n;
        }

        if (!theta_initialized) {
            theta_ema = topk.min_kept_preact;
            theta_initialized = true;
        } else {
            theta_ema = 0.99 * theta_ema + 0.01 * topk.min_kept_preact;
        }

        std::vector<bool> selected(static_cast<size_t>(m), false);
        int64_t nnz = 0;
        for (const auto& [r, c] : topk.kept) {
            selected[static_cast<size_t>(c)] = true;
            if (topk.Z(r, c) > 0.0) ++nnz;
        }
        for (int64_t f = 0; f < m; ++f) {
            if (selected[static_cast<size_t>(f)]) silent_steps[static_cast<size_t>(f)] = 0;
            else ++silent_steps[static_cast<size_t>(f)];
        }

        result.history.push_back({step, parts.mse, parts.aux,
                                  static_cast<double>(nnz) / static_cast<double>(B), dead_count});
    }

    params.theta = theta_ema;
    return result;
}

TrainResult train_sae_on_set(const SaeTrainConfig& config, const RolloutSet& set, int layer) {
    return train_sae(config, stack_rows(set, layer).data);
}

SaeDiagnostics diagnostics_on_rows(const SaeParams& params, const Eigen::MatrixXf& rows,
                                   EncodeMode mode) {
    const Eigen::MatrixXd H = rows.cast<double>();
    const auto [Z, Hhat] = sae_forward(params, H, mode);

    const Eigen::RowVectorXd mean = H.colwise().mean();
    const double total_var = (H.rowwise() - mean).squaredNorm();
    if (total_var == 0.0)
        throw DegenerateVariance("diagnostics: all rows identical, FVE undefined");

    SaeDiagnostics diag;
    diag.fve = 1.0 - (H - Hhat).squaredNorm() / total_var;

    int64_t alive = 0;
    for (int64_t f = 0; f < params.m(); ++f)
        if ((Z.col(f).array() > 0.0).any()) ++alive;
    diag.alive_fraction = static_cast<double>(alive) / static_cast<double>(params.m());
    diag.avg_l0 = static_cast<double>((Z.array() > 0.0).count()) / static_cast<double>(H.rows());
    return diag;
}

SaeDiagnostics diagnostics(const SaeParams& params, const RolloutSet& set, int layer,
                           EncodeMode mode) {
    return diagnostics_on_rows(params, stack_rows(set, layer).data, mode);
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, (d, m, k) u64, (input_scale, theta) f64,
// then the four weight tensors in the shared container convention.
// ---------------------------------------------------------------------------

namespace {
constexpr char kSaeMagic[8] = {'E', 'V', 'S', 'A', 'E', 'S', 'A', 'E'};
constexpr uint64_t kSaeFormatVersion = 1;
}  // namespace

void save_sae(const SaeParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kSaeMagic, sizeof(kSaeMagic));
    const uint64_t header[4] = {kSaeFormatVersion, static_cast<uint64_t>(params.d()),
                                static_cast<uint64_t>(params.m()), static_cast<uint64_t>(params.k)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const double scalars[2] = {params.input_scale, params.theta};
    out.write(reinterpret_cast<const char*>(scalars), sizeof(scalars));
    write_tensor_container(out, {{"W_enc", to_record(Eigen::MatrixXf(params.W_enc.cast<float>()))},
                                 {"b_enc", to_record(Eigen::VectorXf(params.b_enc.cast<float>()))},
                                 {"W_dec", to_record(Eigen::MatrixXf(params.W_dec.cast<float>()))},
                                 {"b_dec", to_record(Eigen::VectorXf(params.b_dec.cast<float>()))}});
    if (!out) throw IoError("write failed: " + path.string());
}

SaeParams load_sae(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("missing SAE checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kSaeMagic, sizeof(magic)) != 0)
        throw FormatVersionMismatch("bad magic in " + path.string());
    uint64_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    double scalars[2];
    in.read(reinterpret_cast<char*>(scalars), sizeof(scalars));
    if (!in) throw IoError("truncated SAE header in " + path.string());
    if (header[0] != kSaeFormatVersion)
        throw FormatVersionMismatch("unsupported SAE checkpoint version " + std::to_string(header[0]));

    TensorFile tensors = read_tensor_container(in, path.string());

    SaeParams p;
    p.k = static_cast<int64_t>(header[3]);
    p.input_scale = scalars[0];
    p.theta = scalars[1];
    p.W_enc = record_to_matrix(tensors.at("W_enc")).cast<double>();
    p.b_enc = record_to_vector(tensors.at("b_enc")).cast<double>();
    p.W_dec = record_to_matrix(tensors.at("W_dec")).cast<double>();
    p.b_dec = record_to_vector(tensors.at("b_dec")).cast<double>();
    if (p.d() != static_cast<int64_t>(header[1]) || p.m() != static_cast<int64_t>(header[2]))
        throw ShapeMismatch("SAE checkpoint header disagrees with tensor shapes");
    return p;
}

}  // namespace evsae
