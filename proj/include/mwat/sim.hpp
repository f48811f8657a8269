#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mwat/driving.hpp"
#include "mwat/trainer.hpp"

namespace mwat {

struct SimConfig {
    int episode_length = 40;
    int n_episodes = 50;
    std::uint64_t seed = 0;
    double collision_radius = 1.5;
    std::optional<double> target_distance;   // default: distance to the grid edge
    std::optional<Tensor> universal_delta;   // Images-site noise, shape [4,32,32]
    double attack_eps = 0.0;                 // budget the delta must satisfy
    DatasetConfig world;                     // scenario generator settings
};

struct StepTrace {
    int step = 0;
    double ego_x = 0, ego_y = 0;
    bool collision = false;
};

struct EpisodeResult {
    double completion = 0.0;   // fraction of the target distance covered
    int collisions = 0;        // steps with an obstacle inside the radius or ego off-corridor
    int off_corridor = 0;      // steps with ego outside the band (subset of collisions)
    bool failed = false;       // aborted on non-finite model output
    std::vector<StepTrace> trace;

    double score() const;      // completion * 0.5^collisions
};

struct SimResult {
    std::vector<EpisodeResult> episodes;
    double driving_score = 0.0;    // mean episode score
    double completion_rate = 0.0;  // mean completion
    double collision_rate = 0.0;   // fraction of episodes with any collision
};

// A policy maps the current observation to three waypoints. The scenario
// argument exposes the true world state for oracle policies in tests; the
// model-backed policy ignores it.
using SimPolicy = std::function<std::array<double, 2 * kHorizon>(const Observation&, const Scenario&)>;

// Rolls the world forward: rasterize, optionally add the universal noise
// (clamped to [0,1]), plan, move the ego toward the first waypoint capped at
// 2 cells/step, advance obstacles at constant velocity. An episode ends at
// episode_length or the corridor end. Deterministic per cfg.seed.
SimResult run_closed_loop_policy(const SimPolicy& policy, const SimConfig& cfg, int threads = 1);
SimResult run_closed_loop(const Checkpoint& victim, const SimConfig& cfg, int threads = 1);

struct DefenseComparisonRow {
    std::string name;
    bool attacked = false;
    SimResult result;
};

// Each checkpoint under clean and attacked conditions; cfg must carry the
// universal noise used for the attacked runs.
std::vector<DefenseComparisonRow> compare_defenses(
    const std::vector<std::pair<std::string, const Checkpoint*>>& checkpoints, const SimConfig& cfg,
    int threads = 1);

void write_episode_traces(const std::filesystem::path& path, const SimResult& result);
void write_defense_table(const std::filesystem::path& path,
                         const std::vector<DefenseComparisonRow>& rows);

}  // namespace mwat
