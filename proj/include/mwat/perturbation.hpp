#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mwat/tensor.hpp"

namespace mwat {

// The five places where noise can enter the pipeline: the raw raster, and the
// four inter-module feature handoffs.
enum class SiteId { Images = 0, TrackMotion = 1, MapMotion = 2, MotionOcc = 3, MotionPlan = 4 };
inline constexpr int kNumSites = 5;

enum class Norm { l1, l2, linf };

const char* to_string(SiteId id);
const char* to_string(Norm p);
SiteId site_from_string(const std::string& s);
Norm norm_from_string(const std::string& s);

// One perturbation per injection site. Deltas are either batch-shaped
// ([B, ...per-site shape]) with per-sample budgets, or sample-shaped (applied
// to every element of a batch, as with universal noise). The budget invariant
// is ||delta||_p <= eps + 1e-9 per site and per sample.
struct PerturbationSet {
    Norm norm = Norm::linf;
    std::map<SiteId, Tensor> deltas;
    std::map<SiteId, double> budgets;
    bool zero_grad_warning = false;

    bool empty() const { return deltas.empty(); }
};

void save_perturbation(const std::filesystem::path& path, const PerturbationSet& set);
PerturbationSet load_perturbation(const std::filesystem::path& path);

}  // namespace mwat
