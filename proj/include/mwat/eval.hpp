#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mwat/attacks.hpp"
#include "mwat/driving.hpp"
#include "mwat/trainer.hpp"

namespace mwat {

enum class CorruptionKind { contrast, frost, snow, gaussian_noise, shot_noise, spatter };
inline constexpr int kNumCorruptions = 6;
inline constexpr int kNumSeverities = 5;

const char* to_string(CorruptionKind k);
CorruptionKind corruption_from_string(const std::string& s);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::contrast;
    int severity = 1;  // 1..5
    std::uint64_t seed = 0;
};

// Simplified severity-graded analogs of the six corruption families, applied
// to the raster and clamped back to [0,1]. Deterministic per (spec, obs).
Observation apply_corruption(const Observation& obs, const CorruptionSpec& spec);

struct EvalCell {
    double mean = 0.0;
    double stddev = 0.0;  // population std
    int count = 0;
};

struct EvalMatrix {
    std::string name;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::vector<std::vector<EvalCell>> cells;  // [row][col]
    std::map<std::string, std::string> metadata;

    const EvalCell& at(const std::string& row, const std::string& col) const;
};

inline const std::vector<std::string> kMetricColumns = {"avg_l2", "iou_map", "min_ade", "iou_occ",
                                                        "det_err"};

struct AttackRow {
    std::string name;
    AttackConfig cfg;
};

// The standard evaluation rows: FGSM / MI-FGSM / PGD-l1 / PGD-l2 / PGD-linf
// on the Images site. l1/l2 budgets follow the eps*sqrt(HW) and eps*HW rule
// scaled to the 32x32 raster (6.4 and 204.8 at eps = 0.2).
std::vector<AttackRow> default_whitebox_attacks(double image_eps = 0.2, int steps = 5,
                                                int restarts = 5);
// The adaptive rows: module-wise, sub-loss and plan-targeted over all sites.
std::vector<AttackRow> adaptive_attacks(int steps = 5, int restarts = 5);

// Per-attack-row metrics of the victim under its own white-box perturbations,
// pooled over samples x seeds; a Clean row is always included.
EvalMatrix evaluate_whitebox(const Checkpoint& victim, const Dataset& data,
                             const std::vector<AttackRow>& attacks, int n_samples,
                             std::span<const std::uint64_t> seeds, int threads = 1);

// Image-only transfer rows, one per surrogate: each row reports the metrics
// of the strongest candidate attack (largest avg_l2 degradation).
EvalMatrix evaluate_blackbox(const Checkpoint& victim,
                             const std::vector<std::pair<std::string, const Checkpoint*>>& surrogates,
                             const Dataset& data, const std::vector<AttackRow>& attacks,
                             int n_samples, std::span<const std::uint64_t> seeds, int threads = 1);

// kind x severity grid of clean-model metrics under corrupted observations.
EvalMatrix evaluate_corruption(const Checkpoint& victim, const Dataset& data, int n_samples,
                               std::span<const std::uint64_t> seeds, int threads = 1);

// CSV per matrix plus a versioned JSON bundle carrying every matrix, the
// run metadata, and content hashes of the inputs.
void emit_report(const std::filesystem::path& dir,
                 const std::vector<EvalMatrix>& matrices,
                 const std::map<std::string, std::string>& metadata);
bool validate_report_bundle(const std::filesystem::path& bundle_json);

// Deterministic helper used by several suites: mean plan avg_l2 over samples.
double mean_plan_error(const Checkpoint& victim, const Dataset& data, int n_samples,
                       const AttackConfig* attack = nullptr, std::uint64_t attack_seed = 1,
                       int threads = 1);

}  // namespace mwat
