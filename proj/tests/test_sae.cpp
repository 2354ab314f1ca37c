#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "evsae/sae.hpp"

using namespace evsae;

namespace {

SaeParams random_params(uint64_t seed, int64_t d, int64_t m, int64_t k, double scale = 1.0) {
    Rng rng(seed);
    SaeParams p;
    p.k = k;
    p.input_scale = scale;
    p.W_dec.resize(d, m);
    for (int64_t c = 0; c < m; ++c) {
        Eigen::VectorXd col(d);
        for (int64_t r = 0; r < d; ++r) col(r) = rng.normal();
        p.W_dec.col(c) = col / col.norm();
    }
    p.W_enc.resize(m, d);
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < d; ++c) p.W_enc(r, c) = rng.normal() * 0.5;
    p.b_enc = Eigen::VectorXd::Zero(m);
    p.b_dec = Eigen::VectorXd::Zero(d);
    for (int64_t i = 0; i < m; ++i) p.b_enc(i) = rng.normal() * 0.1;
    for (int64_t i = 0; i < d; ++i) p.b_dec(i) = rng.normal() * 0.1;
    return p;
}

Eigen::MatrixXd random_rows(uint64_t seed, int64_t n, int64_t d) {
    Rng rng(seed);
    Eigen::MatrixXd H(n, d);
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) H(r, c) = rng.normal();
    return H;
}

// Sparse dictionary data the SAE can recover exactly: 2-dim inputs drawn from
// 4 directions with one active latent per sample.
Eigen::MatrixXf dictionary_data(uint64_t seed, int64_t n) {
    Rng rng(seed);
    Eigen::MatrixXd D(2, 4);
    D << 1, 0, 0.7071, -0.7071, 0, 1, 0.7071, 0.7071;
    Eigen::MatrixXf H(n, 2);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t j = static_cast<int64_t>(rng.below(4));
        const double a = rng.uniform(0.5, 1.5);
        H(i, 0) = static_cast<float>(a * D(0, j));
        H(i, 1) = static_cast<float>(a * D(1, j));
    }
    return H;
}

}  // namespace

TEST_CASE("batch_topk keeps the top kB entries and clamps negatives") {
    SUBCASE("forced example") {
        Eigen::MatrixXd P(2, 3);
        P << 1.0, 0.5, -2.0, 0.2, 3.0, 0.1;
        const auto result = batch_topk(P, 1);
        Eigen::MatrixXd expected(2, 3);
        expected << 1, 0, 0, 0, 3, 0;
        CHECK(result.Z == expected);
    }
    SUBCASE("all-negative single entry clamps to zero") {
        Eigen::MatrixXd P(1, 3);
        P << -1.0, -0.5, -2.0;
        const auto result = batch_topk(P, 1);
        CHECK(result.Z.isZero(0.0));
        // brute-force over kept sets: any single kept entry is negative, so
        // every admissible code is the zero matrix
        REQUIRE(result.kept.size() == 1);
        CHECK(P(result.kept[0].first, result.kept[0].second) == doctest::Approx(-0.5));
    }
    SUBCASE("k = m is the identity on nonnegative matrices") {
        Eigen::MatrixXd P = random_rows(3, 4, 5).cwiseAbs();
        CHECK(batch_topk(P, 5).Z == P);
    }
    SUBCASE("invalid budget") {
        Eigen::MatrixXd P(1, 2);
        P << 1, 2;
        CHECK_THROWS_AS(batch_topk(P, 0), InvalidBudget);
    }
}

TEST_CASE("batch_topk nonzero count equals min(kB, positive entries)") {
    for (uint64_t seed = 1; seed <= 1000; ++seed) {
        Rng rng(seed);
        const int64_t B = 1 + static_cast<int64_t>(rng.below(4));
        const int64_t m = 2 + static_cast<int64_t>(rng.below(6));
        const int64_t k = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(m)));
        Eigen::MatrixXd P(B, m);
        for (int64_t r = 0; r < B; ++r)
            for (int64_t c = 0; c < m; ++c) P(r, c) = rng.normal();
        const auto result = batch_topk(P, k);
        const int64_t positives = (P.array() > 0.0).count();
        const int64_t expected = std::min(k * B, positives);
        CHECK((result.Z.array() > 0.0).count() == expected);
    }
}

TEST_CASE("sae_forward on hand-built instances") {
    SUBCASE("identity SAE passes values through") {
        SaeParams p;
        p.W_enc = Eigen::MatrixXd::Identity(1, 1);
        p.W_dec = Eigen::MatrixXd::Identity(1, 1);
        p.b_enc = Eigen::VectorXd::Zero(1);
        p.b_dec = Eigen::VectorXd::Zero(1);
        p.k = 1;
        Eigen::MatrixXd H(1, 1);
        H << 2.0;
        const auto [Z, Hhat] = sae_forward(p, H);
        CHECK(Z(0, 0) == doctest::Approx(2.0));
        CHECK(Hhat(0, 0) == doctest::Approx(2.0));
    }
    SUBCASE("zero input with zero biases gives zero code and reconstruction") {
        SaeParams p = random_params(5, 3, 6, 2);
        p.b_enc.setZero();
        p.b_dec.setZero();
        const Eigen::MatrixXd H = Eigen::MatrixXd::Zero(4, 3);
        const auto [Z, Hhat] = sae_forward(p, H);
        CHECK(Z.isZero(0.0));
        CHECK(Hhat.isZero(0.0));
    }
}

TEST_CASE("sae_loss matches a from-scratch scalar recomputation") {
    const SaeParams p = random_params(11, 2, 4, 2);
    const Eigen::MatrixXd H = random_rows(12, 3, 2);
    const std::vector<bool> dead = {false, true, false, true};
    const double lambda = 0.5;
    const int64_t k_aux = 2;

    SaeSupports supports;
    const SaeLossParts parts = sae_loss(p, H, dead, lambda, k_aux, &supports);

    // independent recomputation with plain loops
    const int64_t B = H.rows(), d = p.d(), m = p.m();
    std::vector<std::vector<double>> P(B, std::vector<double>(m, 0.0));
    for (int64_t r = 0; r < B; ++r)
        for (int64_t f = 0; f < m; ++f) {
            double acc = p.b_enc(f);
            for (int64_t c = 0; c < d; ++c) acc += p.W_enc(f, c) * p.input_scale * H(r, c);
            P[r][f] = acc;
        }
    std::vector<std::vector<double>> Z(B, std::vector<double>(m, 0.0));
    for (const auto& [r, c] : supports.kept) Z[r][c] = std::max(P[r][c], 0.0);
    std::vector<std::vector<double>> Zaux(B, std::vector<double>(m, 0.0));
    for (const auto& [r, c] : supports.kept_aux) Zaux[r][c] = P[r][c];  // aux keeps raw preacts

    double mse = 0.0, aux = 0.0;
    for (int64_t r = 0; r < B; ++r)
        for (int64_t c = 0; c < d; ++c) {
            double xhat = p.b_dec(c), ehat = 0.0;
            for (int64_t f = 0; f < m; ++f) {
                xhat += p.W_dec(c, f) * Z[r][f];
                ehat += p.W_dec(c, f) * Zaux[r][f];
            }
            const double x = p.input_scale * H(r, c);
            mse += (x - xhat) * (x - xhat);
            aux += ((x - xhat) - ehat) * ((x - xhat) - ehat);
        }
    mse /= static_cast<double>(B);
    aux /= static_cast<double>(B);

    CHECK(parts.mse == doctest::Approx(mse).epsilon(1e-10));
    CHECK(parts.aux == doctest::Approx(aux).epsilon(1e-10));
    CHECK(parts.total == doctest::Approx(mse + lambda * aux).epsilon(1e-10));
}

TEST_CASE("sae_loss special cases") {
    SUBCASE("no dead features means zero aux") {
        const SaeParams p = random_params(21, 2, 4, 2);
        const Eigen::MatrixXd H = random_rows(22, 3, 2);
        const std::vector<bool> dead(4, false);
        const SaeLossParts parts = sae_loss(p, H, dead, 0.7, 2);
        CHECK(parts.aux == 0.0);
        CHECK(parts.total == doctest::Approx(parts.mse));
    }
    SUBCASE("perfect reconstruction means zero mse") {
        SaeParams p;
        p.W_enc = Eigen::MatrixXd::Identity(2, 2);
        p.W_dec = Eigen::MatrixXd::Identity(2, 2);
        p.b_enc = Eigen::VectorXd::Zero(2);
        p.b_dec = Eigen::VectorXd::Zero(2);
        p.k = 2;
        Eigen::MatrixXd H(1, 2);
        H << 1.0, 2.0;
        const std::vector<bool> dead = {false, true};
        const SaeLossParts parts = sae_loss(p, H, dead, 0.25, 1);
        CHECK(parts.mse == doctest::Approx(0.0));
        CHECK(parts.total == doctest::Approx(0.25 * parts.aux));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    // float64, fixed top-k support, relative error 1e-4
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        const int64_t d = 3, m = 6, B = 4;
        SaeParams p = random_params(1000 + seed, d, m, 2, 1.3);
        const Eigen::MatrixXd H = random_rows(2000 + seed, B, d);
        std::vector<bool> dead(m, false);
        dead[1] = dead[4] = true;
        const double lambda = 0.7;

        SaeSupports supports;
        sae_loss(p, H, dead, lambda, 2, &supports);
        // keep the check well-posed: no kept pre-activation may sit at the
        // clamp boundary
        bool boundary = false;
        const Eigen::MatrixXd P = preactivations(p, H);
        for (const auto& [r, c] : supports.kept)
            if (std::abs(P(r, c)) < 1e-4) boundary = true;
        for (const auto& [r, c] : supports.kept_aux)
            if (std::abs(P(r, c)) < 1e-4) boundary = true;
        if (boundary) continue;

        const SaeGradients g = sae_loss_gradients(p, H, supports, lambda);

        auto check_param = [&](double* ptr, const double* grad_ptr, int64_t count) {
            for (int64_t i = 0; i < count; i += 3) {  // sample every third entry
                const double orig = ptr[i];
                const double h = 1e-6 * std::max(1.0, std::abs(orig));
                ptr[i] = orig + h;
                const double up = sae_loss_with_support(p, H, supports, lambda).total;
                ptr[i] = orig - h;
                const double down = sae_loss_with_support(p, H, supports, lambda).total;
                ptr[i] = orig;
                const double fd = (up - down) / (2.0 * h);
                const double denom = std::max({std::abs(fd), std::abs(grad_ptr[i]), 1e-8});
                CHECK(std::abs(fd - grad_ptr[i]) / denom < 1e-4);
            }
        };
        check_param(p.W_enc.data(), g.dW_enc.data(), p.W_enc.size());
        check_param(p.b_enc.data(), g.db_enc.data(), p.b_enc.size());
        check_param(p.W_dec.data(), g.dW_dec.data(), p.W_dec.size());
        check_param(p.b_dec.data(), g.db_dec.data(), p.b_dec.size());
    }
}

TEST_CASE("training is deterministic and recovers a sparse dictionary") {
    const Eigen::MatrixXf rows = dictionary_data(5, 400);
    SaeTrainConfig cfg;
    cfg.m = 4;
    cfg.k = 2;  // slack over the true L0 of 1 lets AuxK revive unlucky features
    cfg.steps = 2000;
    cfg.warmup_steps = 100;
    cfg.batch_size = 64;
    cfg.learning_rate = 3e-3;
    cfg.seed = 7;

    const TrainResult a = train_sae(cfg, rows);
    REQUIRE_FALSE(a.diverged);

    SUBCASE("identity-recoverable data reaches FVE >= 0.99") {
        const SaeDiagnostics diag = diagnostics_on_rows(a.params, rows);
        CHECK(diag.fve >= 0.99);
    }

    SUBCASE("same seed and data reproduce parameters and history bitwise") {
        const TrainResult b = train_sae(cfg, rows);
        CHECK(a.params.W_enc == b.params.W_enc);
        CHECK(a.params.W_dec == b.params.W_dec);
        CHECK(a.params.b_enc == b.params.b_enc);
        CHECK(a.params.b_dec == b.params.b_dec);
        CHECK(a.params.theta == b.params.theta);
        REQUIRE(a.history.size() == b.history.size());
        for (size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].mse == b.history[i].mse);
            CHECK(a.history[i].aux == b.history[i].aux);
        }
    }

    SUBCASE("decoder columns stay unit norm") {
        for (int64_t c = 0; c < a.params.m(); ++c)
            CHECK(a.params.W_dec.col(c).norm() == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("paper-scale active budget is accepted") {
        SaeTrainConfig wide = cfg;
        wide.m = 70;
        wide.k = 64;
        wide.steps = 20;
        wide.warmup_steps = 5;
        CHECK_NOTHROW(train_sae(wide, rows));
    }

    SUBCASE("checkpoint round-trips through the binary format") {
        namespace fs = std::filesystem;
        const auto path = fs::temp_directory_path() / "evsae_test_sae.bin";
        save_sae(a.params, path);
        const SaeParams back = load_sae(path);
        CHECK(back.k == a.params.k);
        CHECK(back.input_scale == a.params.input_scale);
        CHECK(back.theta == a.params.theta);
        CHECK(back.W_enc.cast<float>() == a.params.W_enc.cast<float>());
        CHECK(back.W_dec.cast<float>() == a.params.W_dec.cast<float>());
        fs::remove(path);
    }
}

TEST_CASE("FVE is non-decreasing in k on a fixed dataset") {
    const Eigen::MatrixXf rows = dictionary_data(9, 300);
    double prev = -1e9;
    for (int64_t k : {1, 2, 4}) {
        SaeTrainConfig cfg;
        cfg.m = 4;
        cfg.k = k;
        cfg.steps = 1500;
        cfg.warmup_steps = 100;
        cfg.batch_size = 64;
        cfg.learning_rate = 3e-3;
        cfg.seed = 11;
        const TrainResult r = train_sae(cfg, rows);
        const double fve = diagnostics_on_rows(r.params, rows).fve;
        CHECK(fve >= prev - 5e-3);  // small training-noise allowance
        prev = fve;
    }
}

TEST_CASE("loss trajectory is non-increasing on average over 500-step windows") {
    // flakiness guard: median over 3 seeds
    const Eigen::MatrixXf rows = dictionary_data(13, 400);
    int passes = 0;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        SaeTrainConfig cfg;
        cfg.m = 4;
        cfg.k = 1;
        cfg.steps = 1500;
        cfg.warmup_steps = 100;
        cfg.batch_size = 64;
        cfg.learning_rate = 3e-3;
        cfg.seed = seed;
        const TrainResult r = train_sae(cfg, rows);
        bool monotone = true;
        // compare consecutive 500-step window means of the total-ish loss
        for (size_t start = 0; start + 1000 <= r.history.size(); start += 500) {
            double w1 = 0.0, w2 = 0.0;
            for (size_t i = 0; i < 500; ++i) {
                w1 += r.history[start + i].mse;
                w2 += r.history[start + 500 + i].mse;
            }
            if (w2 > w1) monotone = false;
        }
        if (monotone) ++passes;
    }
    CHECK(passes >= 2);  // median seed is monotone
}

TEST_CASE("diagnostics edge cases") {
    SaeParams p;
    p.W_enc = Eigen::MatrixXd::Identity(2, 2);
    p.W_dec = Eigen::MatrixXd::Identity(2, 2);
    p.b_enc = Eigen::VectorXd::Zero(2);
    p.b_dec = Eigen::VectorXd::Zero(2);
    p.k = 2;
    p.theta = 0.0;

    SUBCASE("perfect reconstruction gives FVE 1") {
        Eigen::MatrixXf rows(3, 2);
        rows << 1, 2, 3, 4, 5, 6;
        CHECK(diagnostics_on_rows(p, rows).fve == doctest::Approx(1.0));
    }
    SUBCASE("mean predictor gives FVE 0") {
        // decoder reproducing only the dataset mean: zero weights, mean bias
        SaeParams mean_p = p;
        mean_p.W_dec.setZero();
        Eigen::MatrixXf rows(4, 2);
        rows << 1, 0, 3, 0, 1, 2, 3, 2;
        mean_p.b_dec << 2.0, 1.0;  // column means
        CHECK(diagnostics_on_rows(mean_p, rows).fve == doctest::Approx(0.0));
    }
    SUBCASE("identical rows are a degenerate variance error, not NaN") {
        Eigen::MatrixXf rows(3, 2);
        rows << 1, 1, 1, 1, 1, 1;
        CHECK_THROWS_AS(diagnostics_on_rows(p, rows), DegenerateVariance);
    }
    SUBCASE("paper report row formatting") {
        CHECK(format("FVE %.3f, alive %.1f%%, L0 %.1f", 0.911, 94.1, 63.6) ==
              "FVE 0.911, alive 94.1%, L0 63.6");
    }
}
