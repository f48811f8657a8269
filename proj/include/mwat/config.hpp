#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mwat/attacks.hpp"
#include "mwat/driving.hpp"
#include "mwat/sim.hpp"
#include "mwat/trainer.hpp"

namespace mwat {

// Fully resolved run configuration. Sections: [dataset] [model] [train]
// [attack] [dwaa] [eval] [sim]. Unknown sections or keys are rejected;
// missing keys take the documented defaults.
struct RunConfig {
    DatasetConfig dataset;
    std::uint64_t model_seed = 0;

    TrainMethod train_method = TrainMethod::ma2t;
    int finetune_epochs = 3;
    int pretrain_epochs = 20;
    int batch_size = 32;
    double pretrain_lr = 1e-3;
    double finetune_lr = 1e-4;
    OptKind optimizer = OptKind::adam;
    int attack_steps = 5;
    double image_eps = 0.2;
    std::vector<ModuleId> frozen;

    AttackMethod attack_method = AttackMethod::pgd;
    Norm attack_norm = Norm::linf;
    Objective attack_objective = Objective::total_loss;
    double attack_eps = 0.2;
    double attack_l1_eps = 6.4;    // eps * sqrt(H*W) for the 32x32 raster
    double attack_l2_eps = 204.8;  // eps * H*W
    int eval_attack_steps = 5;
    int attack_restarts = 5;
    double attack_momentum = 1.0;
    std::map<SiteId, double> site_budgets{{SiteId::Images, 0.8},
                                          {SiteId::TrackMotion, 0.1},
                                          {SiteId::MapMotion, 0.1},
                                          {SiteId::MotionOcc, 0.1},
                                          {SiteId::MotionPlan, 0.1}};

    bool dwaa_enabled = true;
    double dwaa_r = 0.2;
    int dwaa_update_period = 100;

    int eval_samples = 200;
    std::vector<std::uint64_t> eval_seeds{1, 2, 3};

    int sim_episode_length = 40;
    int sim_episodes = 50;
    double sim_collision_radius = 1.5;
    std::optional<double> sim_target_distance;
    double sim_attack_eps = 0.2;
    int noise_epochs = 3;
    int noise_batch = 32;

    // Canonical echo: fixed section/key order, full-precision values. Parsing
    // the echo reproduces the config exactly (fixed point).
    std::string canonical() const;
    std::uint64_t hash() const;

    TrainConfig pretrain_config(std::uint64_t seed) const;
    TrainConfig finetune_config(TrainMethod method, std::uint64_t seed) const;
    // The [attack] section as an attack config; single-site image attack for
    // the configured norm unless `module_wise` asks for all-site budgets.
    AttackConfig eval_attack_config(bool module_wise = false) const;
    double image_eps_for_norm(Norm p) const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void write_resolved_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace mwat
