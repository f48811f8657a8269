#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mwat/pipeline.hpp"
#include "mwat/tensor.hpp"

namespace mwat {

// Grid geometry shared by the whole toy task: a 32x32 cell world, a drivable
// band 8 cells wide, and a 3-step planning horizon. Position-like quantities
// are divided by kPosScale inside losses and multiplied back when decoding
// head outputs, so every module loss lives on a comparable O(1) scale.
inline constexpr int kGrid = 32;
inline constexpr int kCorridorWidth = 8;
inline constexpr int kHorizon = 3;
inline constexpr int kMaxObstacles = 3;
inline constexpr double kPosScale = 32.0;
inline constexpr double kSentinel = -1.0;

struct Scenario {
    std::array<int, kGrid> corridor_low{};  // per column x: band is y in [low, low+7]
    double ego_x = 0, ego_y = 0, ego_v = 0;
    struct Obstacle {
        double x = 0, y = 0, vx = 0, vy = 0;
    };
    std::vector<Obstacle> obstacles;

    bool inside_corridor(double x, double y) const;
    double centerline(double x) const;  // corridor_low + 3.5 at the column nearest x
};

struct Observation {
    Tensor raster;  // [4,32,32]: corridor, ego, obstacles at t, obstacles at t-1
};

struct Labels {
    std::array<double, 2 * kMaxObstacles> obstacle_positions{};        // 3x2, sentinel -1
    std::array<double, 16 * 16> drivable_mask_16{};                    // 16x16
    std::array<double, kMaxObstacles * kHorizon * 2> future_displacements{};  // 3x3x2, sentinel -1
    std::array<double, kHorizon * 8 * 8> future_occupancy{};           // 3 steps x 8x8
    std::array<double, 2 * kHorizon> expert_waypoints{};               // 3x2
    int n_obstacles = 0;
};

struct DatasetConfig {
    std::uint64_t seed = 0;
    int n_scenarios = 2000;
    std::array<double, kMaxObstacles + 1> obstacle_count_probs{0.15, 0.30, 0.30, 0.25};
    double ego_speed_min = 0.5, ego_speed_max = 2.0;
    double obs_speed_min = -0.5, obs_speed_max = 0.5;
    double split_fraction = 0.8;

    void validate() const;
};

struct Dataset {
    DatasetConfig cfg;
    std::string split;  // "train" or "val"
    std::vector<Scenario> scenarios;
    std::vector<Labels> labels;
    std::vector<Observation> observations;  // cached rasters, rebuilt on load

    int size() const { return static_cast<int>(scenarios.size()); }
};

struct InfeasibleScenarioError : ContractError {
    InfeasibleScenarioError() : ContractError("expert planner found no in-corridor candidate") {}
};

Scenario generate_scenario(std::uint64_t seed, const DatasetConfig& cfg);
Observation rasterize(const Scenario& s);
// Expert: per step s, waypoint (ego_x + s*v, centerline + o*) where o* minimizes
// 1000*[obstacle within 2 cells] + o^2 over integer offsets in [-6,6] that stay
// inside the corridor. Ties prefer smaller |o|, then the negative offset.
std::array<double, 2 * kHorizon> expert_plan(const Scenario& s);
Labels make_labels(const Scenario& s);

// Generates both splits deterministically from cfg: record i comes from the
// derived seed (cfg.seed, i); the first floor(n*split) records form train.
std::pair<Dataset, Dataset> build_dataset(const DatasetConfig& cfg);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// The reference 2-2-1 model with documented fixed architecture; same seed
// gives identical initialization.
Pipeline build_reference_model(std::uint64_t seed);
inline constexpr int kReferenceParamCount = 210702;
inline const char* kArchTag = "corridor-2-2-1/v1";

Tensor make_observation_batch(std::span<const Observation> obs);
TargetBatch make_target_batch(std::span<const Labels> labels);

// Head decoders: model heads emit grid-normalized values.
std::array<double, 2 * kHorizon> decode_waypoints(const Tensor& plan_head, int b);
std::array<double, 2 * kMaxObstacles> decode_positions(const Tensor& track_head, int b);
std::array<double, kMaxObstacles * kHorizon * 2> decode_displacements(const Tensor& motion_head, int b);

// Metrics (all in cells). The pair-returning ones carry a validity flag that
// is false when there are no obstacles to score.
double metric_avg_l2(std::span<const double> pred_waypoints, std::span<const double> expert_waypoints);
double metric_iou(std::span<const double> pred_logits, std::span<const double> true_mask,
                  double threshold = 0.5);
std::pair<double, bool> metric_min_ade(std::span<const double> pred_disp,
                                       std::span<const double> true_disp, int n_obstacles);
std::pair<double, bool> metric_det_err(std::span<const double> pred_pos,
                                       std::span<const double> true_pos, int n_obstacles);

}  // namespace mwat
