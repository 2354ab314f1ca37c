#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "evsae/rollout.hpp"
#include "evsae/tensor_io.hpp"

using namespace evsae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("evsae_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Rollout random_rollout(uint64_t seed, int64_t T, int64_t d, const std::string& id) {
    Rng rng(seed);
    Rollout r;
    r.episode_id = id;
    r.task_id = "task0";
    r.success = rng.uniform() < 0.5;
    r.T = T;
    r.ee_pos.resize(T, 3);
    r.gripper.resize(T);
    Eigen::MatrixXf quat(T, 4);
    Eigen::MatrixXf acts0(T, d), acts1(T, d);
    for (int64_t t = 0; t < T; ++t) {
        for (int c = 0; c < 3; ++c) r.ee_pos(t, c) = static_cast<float>(rng.normal());
        r.gripper(t) = static_cast<float>(rng.uniform());
        Eigen::Vector4f q;
        for (int c = 0; c < 4; ++c) q(c) = static_cast<float>(rng.normal());
        quat.row(t) = q / q.norm();
        for (int64_t c = 0; c < d; ++c) {
            acts0(t, c) = static_cast<float>(rng.normal());
            acts1(t, c) = static_cast<float>(rng.normal());
        }
    }
    r.ee_quat = quat;
    r.activations[0] = acts0;
    r.activations[1] = acts1;
    return r;
}

// writes a toy suite and returns the manifest path
fs::path write_toy_suite(const fs::path& dir, int n_episodes = 2, int64_t T = 10, int64_t d = 4) {
    RolloutManifest manifest;
    manifest.suite_id = "toy";
    manifest.tasks.push_back({"task0", "pick and place"});
    for (int i = 0; i < n_episodes; ++i) {
        const std::string id = "ep" + std::to_string(i);
        Rollout r = random_rollout(100 + static_cast<uint64_t>(i), T, d, id);
        write_rollout(r, dir / id);
        manifest.episodes.push_back({id, "task0", r.success, T, id});
    }
    write_manifest(manifest, dir / "manifest.json");
    return dir / "manifest.json";
}

}  // namespace

TEST_CASE("round-trip persistence is bit-exact") {
    const auto dir = temp_dir("roundtrip");
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rollout r = random_rollout(seed, 5 + static_cast<int64_t>(seed % 7), 3, "ep");
        write_rollout(r, dir / "ep");
        const Rollout back = read_rollout(dir / "ep", r.episode_id, r.task_id, r.success);
        CHECK(back == r);
    }
}

TEST_CASE("ingest validates shapes and finiteness") {
    const auto dir = temp_dir("ingest");
    const auto manifest_path = write_toy_suite(dir, 2, 10, 4);

    RolloutSet set = ingest(manifest_path);
    CHECK(set.rollouts.size() == 2);
    int64_t rows = 0;
    for (const auto& r : set.rollouts) rows += r.activations.at(0).rows();
    CHECK(rows == 20);

    SUBCASE("declared T disagrees with arrays") {
        Rollout bad = random_rollout(7, 9, 4, "ep0");  // arrays have T=9, manifest says 10
        write_rollout(bad, dir / "ep0");
        CHECK_THROWS_WITH_AS(ingest(manifest_path),
                             doctest::Contains("ep0"), ShapeMismatch);
    }

    SUBCASE("NaN activation names episode, timestep and layer") {
        Rollout bad = random_rollout(8, 10, 4, "ep0");
        bad.activations[1](3, 2) = std::numeric_limits<float>::quiet_NaN();
        write_rollout(bad, dir / "ep0");
        try {
            ingest(manifest_path);
            FAIL("expected NonFiniteActivation");
        } catch (const NonFiniteActivation& e) {
            const std::string msg = e.what();
            CHECK(msg.find("ep0") != std::string::npos);
            CHECK(msg.find("timestep 3") != std::string::npos);
            CHECK(msg.find("layer 1") != std::string::npos);
        }
    }

    SUBCASE("missing data file") {
        fs::remove(dir / "ep1" / "traj.bin");
        CHECK_THROWS_AS(ingest(manifest_path), MissingFile);
    }

    SUBCASE("repeated ingest yields identical content") {
        RolloutSet again = ingest(manifest_path);
        REQUIRE(again.rollouts.size() == set.rollouts.size());
        for (size_t i = 0; i < set.rollouts.size(); ++i)
            CHECK(again.rollouts[i] == set.rollouts[i]);
    }
}

TEST_CASE("manifest invariants") {
    const auto dir = temp_dir("manifest");
    RolloutManifest m;
    m.suite_id = "s";
    m.tasks.push_back({"task0", "d"});

    SUBCASE("unknown task id rejected") {
        m.episodes.push_back({"ep0", "nope", true, 5, "ep0"});
        write_manifest(m, dir / "manifest.json");
        CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), ShapeMismatch);
    }
    SUBCASE("duplicate episode ids rejected") {
        m.episodes.push_back({"ep0", "task0", true, 5, "ep0"});
        m.episodes.push_back({"ep0", "task0", false, 5, "ep0b"});
        write_manifest(m, dir / "manifest.json");
        CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), ShapeMismatch);
    }
    SUBCASE("length_T below 2 rejected") {
        m.episodes.push_back({"ep0", "task0", true, 1, "ep0"});
        write_manifest(m, dir / "manifest.json");
        CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), ShapeMismatch);
    }
}

TEST_CASE("tensor container rejects bad files") {
    const auto dir = temp_dir("tensor");

    SUBCASE("wrong magic") {
        std::ofstream out(dir / "bad.bin", std::ios::binary);
        out << "NOTMAGIC_________________";
        out.close();
        CHECK_THROWS_AS(read_tensor_file(dir / "bad.bin"), FormatVersionMismatch);
    }

    SUBCASE("truncated payload reports expected vs actual bytes") {
        Eigen::MatrixXf m(4, 4);
        m.setConstant(1.0f);
        write_tensor_file(dir / "t.bin", {{"x", to_record(m)}});
        const auto size = fs::file_size(dir / "t.bin");
        fs::resize_file(dir / "t.bin", size - 10);
        try {
            read_tensor_file(dir / "t.bin");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("expected 64 bytes") != std::string::npos);
            CHECK(msg.find("got 54") != std::string::npos);
        }
    }
}

TEST_CASE("activation batches partition every row exactly once") {
    const auto dir = temp_dir("batches");
    const auto manifest_path = write_toy_suite(dir, 2, 10, 4);
    RolloutSet set = ingest(manifest_path);

    SUBCASE("20 rows with batch size 8 gives 8, 8, 4") {
        auto batches = activation_batches(set, 0, 8, 42);
        REQUIRE(batches.size() == 3);
        CHECK(batches[0].data.rows() == 8);
        CHECK(batches[1].data.rows() == 8);
        CHECK(batches[2].data.rows() == 4);
    }

    SUBCASE("multiset of provenance rows equals the source rows") {
        auto batches = activation_batches(set, 0, 7, 9);
        std::multiset<std::pair<std::string, int64_t>> seen;
        for (const auto& b : batches)
            for (const auto& p : b.provenance) seen.insert(p);
        std::multiset<std::pair<std::string, int64_t>> expected;
        for (const auto& r : set.rollouts)
            for (int64_t t = 0; t < r.T; ++t) expected.insert({r.episode_id, t});
        CHECK(seen == expected);
    }

    SUBCASE("same seed reproduces the batch sequence") {
        auto a = activation_batches(set, 0, 8, 7);
        auto b = activation_batches(set, 0, 8, 7);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].data == b[i].data);
            CHECK(a[i].provenance == b[i].provenance);
        }
    }

    SUBCASE("paper-scale batch size larger than the data gives one batch") {
        auto batches = activation_batches(set, 0, 40000, 3);
        REQUIRE(batches.size() == 1);
        CHECK(batches[0].data.rows() == 20);
    }

    SUBCASE("unknown layer") {
        CHECK_THROWS_AS(activation_batches(set, 99, 8, 1), UnknownLayer);
    }
}
