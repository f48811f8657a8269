#include "mwat/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mwat/attacks.hpp"
#include "mwat/parallel.hpp"

namespace mwat {

double EpisodeResult::score() const { return completion * std::pow(0.5, collisions); }

namespace {

EpisodeResult run_episode(const SimPolicy& policy, const SimConfig& cfg, std::uint64_t episode_seed) {
    Scenario world = generate_scenario(episode_seed, cfg.world);
    const double start_x = world.ego_x;
    const double target =
        cfg.target_distance ? *cfg.target_distance : (kGrid - 1) - start_x;

    EpisodeResult ep;
    double max_progress = 0.0;
    for (int step = 0; step < cfg.episode_length; ++step) {
        Observation obs = rasterize(world);
        if (cfg.universal_delta) {
            Tensor noisy = obs.raster.detached();
            auto nd = noisy.data();
            const auto& delta = *cfg.universal_delta;
            for (int i = 0; i < noisy.size(); ++i)
                nd[static_cast<std::size_t>(i)] =
                    std::clamp(nd[static_cast<std::size_t>(i)] + delta[i], 0.0, 1.0);
            obs.raster = std::move(noisy);
        }

        std::array<double, 2 * kHorizon> waypoints{};
        try {
            waypoints = policy(obs, world);
        } catch (const NumericError&) {
            ep.failed = true;
            ep.collisions += 1;
            break;
        }

        // track toward the first waypoint, speed-capped at 2 cells/step
        const double dx = waypoints[0] - world.ego_x;
        const double dy = waypoints[1] - world.ego_y;
        const double dist = std::hypot(dx, dy);
        const double scale = dist > 2.0 ? 2.0 / dist : 1.0;
        world.ego_x += dx * scale;
        world.ego_y += dy * scale;
        for (auto& o : world.obstacles) {
            o.x += o.vx;
            o.y += o.vy;
        }

        bool near_obstacle = false;
        for (const auto& o : world.obstacles)
            if (std::hypot(o.x - world.ego_x, o.y - world.ego_y) <= cfg.collision_radius)
                near_obstacle = true;
        const bool off = !world.inside_corridor(world.ego_x, world.ego_y);
        const bool collided = near_obstacle || off;
        ep.collisions += collided;
        ep.off_corridor += off;
        ep.trace.push_back({step, world.ego_x, world.ego_y, collided});

        max_progress = std::max(max_progress, world.ego_x - start_x);
        if (world.ego_x >= kGrid - 1) break;  // corridor end
    }
    ep.completion = target > 0.0 ? std::clamp(max_progress / target, 0.0, 1.0) : 1.0;
    return ep;
}

}  // namespace

SimResult run_closed_loop_policy(const SimPolicy& policy, const SimConfig& cfg, int threads) {
    if (cfg.episode_length <= 0 || cfg.n_episodes <= 0)
        throw ContractError("sim: episode_length and n_episodes must be positive");
    if (cfg.universal_delta) {
        if (cfg.universal_delta->shape() != std::vector<int>{4, kGrid, kGrid})
            throw ContractError("sim: universal delta must have the Images site shape");
        if (cfg.attack_eps > 0.0 &&
            lp_norm(cfg.universal_delta->data(), Norm::linf) > cfg.attack_eps + 1e-9)
            throw ContractError("sim: universal delta violates its budget");
    }

    SimResult out;
    out.episodes.resize(static_cast<std::size_t>(cfg.n_episodes));
    parallel_for(cfg.n_episodes, threads, [&](int e) {
        out.episodes[static_cast<std::size_t>(e)] =
            run_episode(policy, cfg, Rng::derive(cfg.seed, static_cast<std::uint64_t>(e)));
    });

    double score = 0.0, completion = 0.0;
    int collided = 0;
    for (const auto& ep : out.episodes) {
        score += ep.score();
        completion += ep.completion;
        collided += ep.collisions > 0;
    }
    out.driving_score = score / cfg.n_episodes;
    out.completion_rate = completion / cfg.n_episodes;
    out.collision_rate = static_cast<double>(collided) / cfg.n_episodes;
    return out;
}

SimResult run_closed_loop(const Checkpoint& victim, const SimConfig& cfg, int threads) {
    Pipeline model = pipeline_from_checkpoint(victim);
    SimPolicy policy = [&model](const Observation& obs, const Scenario&) {
        Tensor batch = make_observation_batch(std::span(&obs, 1));
        ForwardResult fr = model.forward_with_noise(batch, nullptr, nullptr);
        return decode_waypoints(fr.head[static_cast<std::size_t>(ModuleId::Plan)], 0);
    };
    return run_closed_loop_policy(policy, cfg, threads);
}

std::vector<DefenseComparisonRow> compare_defenses(
    const std::vector<std::pair<std::string, const Checkpoint*>>& checkpoints, const SimConfig& cfg,
    int threads) {
    std::vector<DefenseComparisonRow> rows;
    for (const auto& [name, ckpt] : checkpoints) {
        SimConfig clean_cfg = cfg;
        clean_cfg.universal_delta.reset();
        rows.push_back({name, false, run_closed_loop(*ckpt, clean_cfg, threads)});
        if (cfg.universal_delta)
            rows.push_back({name, true, run_closed_loop(*ckpt, cfg, threads)});
    }
    return rows;
}

void write_episode_traces(const std::filesystem::path& path, const SimResult& result) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.precision(17);
    os << "episode,step,ego_x,ego_y,collision\n";
    for (std::size_t e = 0; e < result.episodes.size(); ++e)
        for (const auto& t : result.episodes[e].trace)
            os << e << "," << t.step << "," << t.ego_x << "," << t.ego_y << ","
               << (t.collision ? 1 : 0) << "\n";
}

void write_defense_table(const std::filesystem::path& path,
                         const std::vector<DefenseComparisonRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.precision(17);
    os << "checkpoint,attacked,driving_score,completion_rate,collision_rate\n";
    for (const auto& r : rows)
        os << r.name << "," << (r.attacked ? 1 : 0) << "," << r.result.driving_score << ","
           << r.result.completion_rate << "," << r.result.collision_rate << "\n";
}

}  // namespace mwat
