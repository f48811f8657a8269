#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mwat/attacks.hpp"
#include "mwat/driving.hpp"
#include "mwat/dwaa.hpp"
#include "mwat/optim.hpp"
#include "mwat/pipeline.hpp"

namespace mwat {

enum class TrainMethod { clean, ma2t, fat, pgd_l1, pgd_l2, pgd_linf };

const char* to_string(TrainMethod m);
TrainMethod train_method_from_string(const std::string& s);

struct TrainConfig {
    TrainMethod method = TrainMethod::clean;
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 1e-3;
    OptKind optimizer = OptKind::adam;
    // Inner maximization. ma2t attacks all five sites with the default
    // budgets; baselines perturb only the Images site (fat: FGSM, pgd_*:
    // PGD under the named norm) with the image epsilon below.
    int attack_steps = 5;
    double image_eps = 0.2;
    std::map<SiteId, double> budgets;  // ma2t site budgets; empty = defaults
    bool dwaa_enabled = false;
    double dwaa_r = 0.2;
    int dwaa_update_period = 100;
    std::vector<ModuleId> frozen;
    std::uint64_t seed = 0;

    void validate() const;
    // The attack the training loop runs each batch, or nullopt for clean.
    std::optional<AttackConfig> inner_attack(const Pipeline& model) const;
};

std::uint64_t train_config_hash(const TrainConfig& cfg);

struct Checkpoint {
    std::uint32_t version = 1;
    std::string arch_tag;
    std::string method = "clean";
    std::uint64_t seed = 0;
    int epoch = 0;
    std::vector<Param> params;  // "Module.layer" names in fixed order
    DwaaState dwaa{0.2, 100};

    std::uint64_t content_hash() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint checkpoint_from_pipeline(const Pipeline& model, const std::string& method,
                                    std::uint64_t seed, int epoch, const DwaaState* dwaa = nullptr);
// Rebuilds the reference pipeline and loads the checkpoint's parameters;
// rejects a checkpoint whose architecture tag does not match.
Pipeline pipeline_from_checkpoint(const Checkpoint& ckpt);

struct BatchLogRow {
    int batch = 0;
    std::array<double, kNumModules> losses{};
    double total = 0.0;
    bool skipped = false;
};

struct DwaaLogRow {
    int update_index = 0;
    std::array<double, kNumModules> weights{};
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<BatchLogRow> batch_log;
    std::vector<DwaaLogRow> dwaa_log;
    int skipped_batches = 0;
    bool aborted = false;
    double final_train_loss = 0.0;
};

// Standard minimization of the unit-weight total loss from a fresh seeded
// initialization. Deterministic per (dataset, cfg).
TrainResult pretrain_clean(const Dataset& train, const TrainConfig& cfg);

// Fine-tuning from a pretrained checkpoint. Per batch: run the method's
// inner attack against the current model, take the per-module losses under
// the returned noise, weight them (DWAA weights when enabled), update the
// non-frozen parameters. DWAA windows close every dwaa_update_period batches.
// Numerically failed batches are skipped and counted; more than 1% aborts.
TrainResult finetune(const Checkpoint& pretrained, const Dataset& train, const TrainConfig& cfg);

// Mean unit-weight total loss over a split, forward only.
double evaluate_loss(const Pipeline& model, const Dataset& data, int batch_size = 64);

// Writes batch_log.csv, dwaa_log.csv and checkpoint.mwck into the directory.
void train_log_emit(const std::filesystem::path& dir, const TrainResult& result,
                    const TrainConfig& cfg);

void write_batch_log(const std::filesystem::path& path, const std::vector<BatchLogRow>& rows);
void write_dwaa_log(const std::filesystem::path& path, const std::vector<DwaaLogRow>& rows);

}  // namespace mwat
