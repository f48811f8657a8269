#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mwat/driving.hpp"
#include "mwat/rng.hpp"

using namespace mwat;

namespace {

// Independent restatement of the expert cost: enumerate every candidate and
// apply the tie-break ordering explicitly.
std::array<double, 6> brute_force_plan(const Scenario& s) {
    std::array<double, 6> wp{};
    for (int step = 1; step <= kHorizon; ++step) {
        const double x = s.ego_x + step * s.ego_v;
        const double c = s.centerline(x);
        bool found = false;
        double best_cost = 0.0;
        int best_o = 0;
        for (int o = -6; o <= 6; ++o) {
            const double y = c + o;
            if (!s.inside_corridor(x, y)) continue;
            double cost = o * o;
            bool blocked = false;
            for (const auto& ob : s.obstacles) {
                const double ox = ob.x + step * ob.vx;
                const double oy = ob.y + step * ob.vy;
                if (std::hypot(ox - x, oy - y) <= 2.0) blocked = true;
            }
            if (blocked) cost += 1000.0;
            const bool better =
                !found || cost < best_cost ||
                (cost == best_cost &&
                 (std::abs(o) < std::abs(best_o) || (std::abs(o) == std::abs(best_o) && o < best_o)));
            if (better) {
                found = true;
                best_cost = cost;
                best_o = o;
            }
        }
        REQUIRE(found);
        wp[static_cast<std::size_t>(2 * (step - 1))] = x;
        wp[static_cast<std::size_t>(2 * (step - 1) + 1)] = c + best_o;
    }
    return wp;
}

DatasetConfig small_cfg(std::uint64_t seed, int n) {
    DatasetConfig cfg;
    cfg.seed = seed;
    cfg.n_scenarios = n;
    return cfg;
}

}  // namespace

TEST_CASE("scenario generation is deterministic and valid") {
    DatasetConfig cfg = small_cfg(3, 10);
    Scenario a = generate_scenario(17, cfg);
    Scenario b = generate_scenario(17, cfg);
    CHECK(a.ego_x == b.ego_x);
    CHECK(a.obstacles.size() == b.obstacles.size());

    // invariant sweep
    for (int i = 0; i < 10000; ++i) {
        Scenario s = generate_scenario(Rng::derive(1, static_cast<std::uint64_t>(i)), cfg);
        CHECK(s.inside_corridor(s.ego_x, s.ego_y));
        CHECK(s.obstacles.size() <= kMaxObstacles);
        for (const auto& o : s.obstacles) CHECK(s.inside_corridor(o.x, o.y));
        for (int x = 0; x < kGrid; ++x) {
            CHECK(s.corridor_low[static_cast<std::size_t>(x)] >= 0);
            CHECK(s.corridor_low[static_cast<std::size_t>(x)] + kCorridorWidth <= kGrid);
        }
    }
}

TEST_CASE("zero-obstacle config produces sentinel labels") {
    DatasetConfig cfg = small_cfg(5, 4);
    cfg.obstacle_count_probs = {1.0, 0.0, 0.0, 0.0};
    Scenario s = generate_scenario(9, cfg);
    CHECK(s.obstacles.empty());
    Labels lb = make_labels(s);
    CHECK(lb.n_obstacles == 0);
    for (double v : lb.obstacle_positions) CHECK(v == kSentinel);
    for (double v : lb.future_displacements) CHECK(v == kSentinel);
    for (double v : lb.future_occupancy) CHECK(v == 0.0);
}

TEST_CASE("rasterize basics") {
    DatasetConfig cfg = small_cfg(5, 4);
    cfg.obstacle_count_probs = {1.0, 0.0, 0.0, 0.0};
    Scenario s = generate_scenario(21, cfg);
    Observation obs = rasterize(s);
    // ego channel has exactly one nonzero pixel
    int lit = 0;
    for (int i = 0; i < kGrid * kGrid; ++i) lit += (obs.raster[kGrid * kGrid + i] != 0.0);
    CHECK(lit == 1);
    // binary raster
    for (int i = 0; i < obs.raster.size(); ++i) {
        const double v = obs.raster[i];
        CHECK((v == 0.0 || v == 1.0));
    }
    // idempotent
    Observation obs2 = rasterize(s);
    CHECK(obs.raster.checksum() == obs2.raster.checksum());
}

TEST_CASE("expert: no obstacles means centerline") {
    DatasetConfig cfg = small_cfg(5, 4);
    cfg.obstacle_count_probs = {1.0, 0.0, 0.0, 0.0};
    Scenario s = generate_scenario(33, cfg);
    auto wp = expert_plan(s);
    for (int step = 1; step <= kHorizon; ++step) {
        const double x = s.ego_x + step * s.ego_v;
        CHECK(wp[static_cast<std::size_t>(2 * (step - 1))] == doctest::Approx(x));
        CHECK(wp[static_cast<std::size_t>(2 * (step - 1) + 1)] == doctest::Approx(s.centerline(x)));
    }
}

TEST_CASE("expert: centerline obstacle forces offset 3") {
    Scenario s;
    s.corridor_low.fill(12);
    s.ego_x = 4.0;
    s.ego_y = 15.5;
    s.ego_v = 1.0;
    // obstacle parked exactly on the step-1 candidate at o=0
    Scenario::Obstacle o;
    o.x = 5.0;
    o.y = s.centerline(5.0);
    o.vx = 0.0;
    o.vy = 0.0;
    s.obstacles.push_back(o);
    auto wp = expert_plan(s);
    const double off1 = wp[1] - s.centerline(5.0);
    CHECK(std::abs(off1) == doctest::Approx(3.0));
    CHECK(off1 == doctest::Approx(-3.0));  // negative offset wins the tie
}

TEST_CASE("expert equals brute-force minimizer on 1000 random scenarios") {
    DatasetConfig cfg = small_cfg(6, 4);
    for (int i = 0; i < 1000; ++i) {
        Scenario s = generate_scenario(Rng::derive(77, static_cast<std::uint64_t>(i)), cfg);
        auto fast = expert_plan(s);
        auto ref = brute_force_plan(s);
        for (int k = 0; k < 6; ++k) CHECK(fast[static_cast<std::size_t>(k)] == ref[static_cast<std::size_t>(k)]);
    }
}

TEST_CASE("labels are consistent with constant-velocity rollout") {
    DatasetConfig cfg = small_cfg(8, 4);
    for (int i = 0; i < 200; ++i) {
        Scenario s = generate_scenario(Rng::derive(101, static_cast<std::uint64_t>(i)), cfg);
        Labels lb = make_labels(s);
        // re-simulate and re-derive occupancy
        std::array<double, kHorizon * 8 * 8> occ{};
        for (const auto& o : s.obstacles)
            for (int step = 1; step <= kHorizon; ++step) {
                const int gx = std::clamp(static_cast<int>(std::lround(o.x + step * o.vx)), 0, 31) / 4;
                const int gy = std::clamp(static_cast<int>(std::lround(o.y + step * o.vy)), 0, 31) / 4;
                occ[static_cast<std::size_t>(((step - 1) * 8 + gy) * 8 + gx)] = 1.0;
            }
        for (std::size_t k = 0; k < occ.size(); ++k) CHECK(occ[k] == lb.future_occupancy[k]);
    }
}

TEST_CASE("dataset build is pure and serialization round-trips bit-exactly") {
    DatasetConfig cfg = small_cfg(42, 30);
    auto [train1, val1] = build_dataset(cfg);
    auto [train2, val2] = build_dataset(cfg);
    CHECK(train1.size() == 24);
    CHECK(val1.size() == 6);
    REQUIRE(train1.size() == train2.size());
    for (int i = 0; i < train1.size(); ++i)
        CHECK(train1.observations[static_cast<std::size_t>(i)].raster.checksum() ==
              train2.observations[static_cast<std::size_t>(i)].raster.checksum());

    namespace fs = std::filesystem;
    const fs::path p1 = fs::temp_directory_path() / "mwat_test_train.mwds";
    const fs::path p2 = fs::temp_directory_path() / "mwat_test_train2.mwds";
    save_dataset(p1, train1);
    Dataset loaded = load_dataset(p1);
    save_dataset(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());
    fs::remove(p1);
    fs::remove(p2);

    CHECK(loaded.size() == train1.size());
    for (int i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.observations[static_cast<std::size_t>(i)].raster.checksum() ==
              train1.observations[static_cast<std::size_t>(i)].raster.checksum());
        CHECK(loaded.labels[static_cast<std::size_t>(i)].n_obstacles ==
              train1.labels[static_cast<std::size_t>(i)].n_obstacles);
    }
}

TEST_CASE("reference model: documented parameter count, deterministic init") {
    Pipeline p1 = build_reference_model(1);
    Pipeline p2 = build_reference_model(1);
    Pipeline p3 = build_reference_model(2);
    CHECK(p1.parameter_count() == kReferenceParamCount);
    CHECK(p1.parameter_checksum() == p2.parameter_checksum());
    CHECK(p1.parameter_checksum() != p3.parameter_checksum());
}

TEST_CASE("reference model: forward yields 5 finite losses") {
    DatasetConfig cfg = small_cfg(11, 8);
    auto [train, val] = build_dataset(cfg);
    Pipeline p = build_reference_model(4);
    Tensor obs = make_observation_batch(std::span(train.observations.data(), 4));
    TargetBatch tb = make_target_batch(std::span(train.labels.data(), 4));
    ForwardResult fr = p.forward(obs, tb);
    REQUIRE(fr.has_losses);
    for (int j = 0; j < kNumModules; ++j) {
        const double v = fr.losses.per_module[static_cast<std::size_t>(j)].item();
        CHECK(std::isfinite(v));
        CHECK(fr.losses.per_sample[static_cast<std::size_t>(j)].size() == 4);
    }
}

TEST_CASE("metric definitions") {
    // identical trajectories
    std::array<double, 6> a{1, 2, 3, 4, 5, 6};
    CHECK(metric_avg_l2(a, a) == 0.0);
    // constant (3,4) offset is distance 5
    std::array<double, 6> b{};
    for (int s = 0; s < 3; ++s) {
        b[static_cast<std::size_t>(2 * s)] = a[static_cast<std::size_t>(2 * s)] + 3;
        b[static_cast<std::size_t>(2 * s + 1)] = a[static_cast<std::size_t>(2 * s + 1)] + 4;
    }
    CHECK(metric_avg_l2(b, a) == doctest::Approx(5.0));
    // random pairs vs direct formula
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::array<double, 6> p{}, q{};
        for (auto& v : p) v = rng.uniform(-10, 10);
        for (auto& v : q) v = rng.uniform(-10, 10);
        double want = 0.0;
        for (int s = 0; s < 3; ++s)
            want += std::hypot(p[static_cast<std::size_t>(2 * s)] - q[static_cast<std::size_t>(2 * s)],
                               p[static_cast<std::size_t>(2 * s + 1)] - q[static_cast<std::size_t>(2 * s + 1)]) / 3.0;
        CHECK(metric_avg_l2(p, q) == doctest::Approx(want));
    }

    // IOU: identical, disjoint, half-overlapping 2-cell masks
    std::array<double, 4> m1{1, 1, 0, 0};
    std::array<double, 4> logits_same{5, 5, -5, -5};
    CHECK(metric_iou(logits_same, m1) == doctest::Approx(1.0));
    std::array<double, 4> logits_disjoint{-5, -5, 5, 5};
    CHECK(metric_iou(logits_disjoint, m1) == doctest::Approx(0.0));
    std::array<double, 4> logits_half{5, -5, 5, -5};  // predicts cells {0,2}, truth {0,1}
    CHECK(metric_iou(logits_half, m1) == doctest::Approx(1.0 / 3.0));

    // minADE
    std::array<double, 18> d0{};
    CHECK(metric_min_ade(d0, d0, 2).first == 0.0);
    CHECK(metric_min_ade(d0, d0, 2).second);
    auto [v0, ok0] = metric_min_ade(d0, d0, 0);
    CHECK(v0 == 0.0);
    CHECK(!ok0);
    // hand-computed 1-obstacle case: displacement errors (1,0),(0,1),(3,4)
    std::array<double, 18> pred{}, truth{};
    pred[0] = 1;                 // step 1 dx error 1
    pred[3] = 1;                 // step 2 dy error 1
    pred[4] = 3; pred[5] = 4;    // step 3 error 5
    auto [v1, ok1] = metric_min_ade(pred, truth, 1);
    CHECK(ok1);
    CHECK(v1 == doctest::Approx((1.0 + 1.0 + 5.0) / 3.0));

    // det err mirrors the same pattern on positions
    std::array<double, 6> pp{3, 4, 0, 0, 0, 0}, tt{};
    auto [v2, ok2] = metric_det_err(pp, tt, 1);
    CHECK(ok2);
    CHECK(v2 == doctest::Approx(5.0));
    CHECK(!metric_det_err(pp, tt, 0).second);
}
