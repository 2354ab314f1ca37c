#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evsae/keyframes.hpp"

using namespace evsae;

namespace {

// Independent oracle: pointwise deviation check with its own interpolation
// loop, and a Bellman-Ford style minimal-count DP that shares no code with
// awe_extract.
double oracle_segment_error(const Eigen::MatrixXf& traj, int64_t i, int64_t j) {
    double worst = 0.0;
    for (int64_t t = j; t >= i; --t) {  // reversed scan: independent of the impl's order
        const double u = double(t - i) / double(j - i);
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double a = traj(i, c), b = traj(j, c);
            const double interp = a + u * (b - a);
            const double diff = double(traj(t, c)) - interp;
            sq += diff * diff;
        }
        worst = std::max(worst, std::sqrt(sq));
    }
    return worst;
}

int64_t oracle_min_waypoints(const Eigen::MatrixXf& traj, double eta) {
    const int64_t T = traj.rows();
    std::vector<int64_t> best(T, T + 1);
    best[0] = 1;
    for (int64_t j = 1; j < T; ++j)
        for (int64_t i = 0; i < j; ++i)
            if (oracle_segment_error(traj, i, j) <= eta) best[j] = std::min(best[j], best[i] + 1);
    return best[T - 1];
}

Eigen::MatrixXf random_traj(uint64_t seed, int64_t T, double scale = 0.3) {
    Rng rng(seed);
    Eigen::MatrixXf traj(T, 3);
    Eigen::Vector3d p(rng.uniform(), rng.uniform(), rng.uniform());
    for (int64_t t = 0; t < T; ++t) {
        traj.row(t) = p.cast<float>();
        for (int c = 0; c < 3; ++c) p(c) += scale * rng.normal() * 0.1;
    }
    return traj;
}

}  // namespace

TEST_CASE("segment_error basics") {
    Eigen::MatrixXf traj(3, 3);

    SUBCASE("collinear points have zero error") {
        traj << 0, 0, 0, 1, 0, 0, 2, 0, 0;
        CHECK(segment_error(traj, 0, 2) == doctest::Approx(0.0));
    }
    SUBCASE("triangle apex deviation") {
        traj << 0, 0, 0, 1, 1, 0, 2, 0, 0;
        CHECK(segment_error(traj, 0, 2) == doctest::Approx(1.0));
    }
    SUBCASE("index validation") {
        traj.setZero();
        CHECK_THROWS_AS(segment_error(traj, 2, 1), IndexOutOfRange);
        CHECK_THROWS_AS(segment_error(traj, 0, 5), IndexOutOfRange);
    }
}

TEST_CASE("segment_error equals the brute-force loop on random trajectories") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        const auto traj = random_traj(seed, 20);
        for (int64_t i = 0; i < 19; ++i)
            for (int64_t j = i + 1; j < 20; ++j)
                CHECK(segment_error(traj, i, j) == oracle_segment_error(traj, i, j));
    }
}

TEST_CASE("awe_extract trivial cases") {
    SUBCASE("straight line keeps only the endpoints") {
        Eigen::MatrixXf traj(6, 3);
        for (int t = 0; t < 6; ++t) traj.row(t) << float(t), 0.0f, 0.0f;
        const auto wps = awe_extract(traj, 0.05);
        CHECK(wps == std::vector<int64_t>{0, 5});
    }
    SUBCASE("apex above budget forces the middle point") {
        Eigen::MatrixXf traj(3, 3);
        traj << 0, 0, 0, 1, 1, 0, 2, 0, 0;
        const auto wps = awe_extract(traj, 0.5);
        CHECK(wps == std::vector<int64_t>{0, 1, 2});
    }
}

TEST_CASE("awe_extract matches the exhaustive DP oracle and stays feasible") {
    const double eta = 0.05;
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        const int64_t T = 5 + static_cast<int64_t>(seed % 26);
        const auto traj = random_traj(seed, T);
        const auto wps = awe_extract(traj, eta);

        REQUIRE(wps.front() == 0);
        REQUIRE(wps.back() == T - 1);
        for (size_t i = 0; i + 1 < wps.size(); ++i)
            CHECK(segment_error(traj, wps[i], wps[i + 1]) <= eta);
        CHECK(static_cast<int64_t>(wps.size()) == oracle_min_waypoints(traj, eta));
    }
}

TEST_CASE("waypoint count is non-increasing in eta") {
    const auto traj = random_traj(99, 25);
    size_t prev = SIZE_MAX;
    for (double eta : {0.01, 0.02, 0.05, 0.1, 0.3}) {
        const auto wps = awe_extract(traj, eta);
        CHECK(wps.size() <= prev);
        prev = wps.size();
    }
}

TEST_CASE("bundles clip offsets at episode boundaries") {
    Rollout r;
    r.episode_id = "ep0";
    r.task_id = "task0";
    r.success = true;
    r.T = 10;
    r.ee_pos = Eigen::MatrixXf::Zero(10, 3);
    r.gripper = Eigen::VectorXf::Zero(10);

    SUBCASE("waypoint near the left edge") {
        const auto bundles = make_bundles(r, {1}, "desc", 0);
        REQUIRE(bundles.size() == 1);
        CHECK(bundles[0].frame_offsets == std::vector<int64_t>{0, 1, 3, 5});
        CHECK(bundles[0].offsets_clipped);
    }
    SUBCASE("final waypoint has progress 1") {
        const auto bundles = make_bundles(r, {9}, "desc", 0);
        CHECK(bundles[0].progress == doctest::Approx(1.0));
    }
    SUBCASE("interior waypoint keeps all five offsets") {
        const auto bundles = make_bundles(r, {5}, "desc", 0);
        CHECK(bundles[0].frame_offsets == std::vector<int64_t>{1, 3, 5, 7, 9});
        CHECK_FALSE(bundles[0].offsets_clipped);
    }
}

TEST_CASE("suite-level keyframes-per-rollout formats to two decimals") {
    // report formatting mirror: mean keyframes per rollout printed like 4.15
    CHECK(format("%.2f", 4.1537) == "4.15");
}
