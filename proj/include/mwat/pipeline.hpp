#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mwat/autodiff.hpp"
#include "mwat/perturbation.hpp"
#include "mwat/tensor.hpp"

namespace mwat {

enum class ModuleId { Track = 0, Map = 1, Motion = 2, Occ = 3, Plan = 4 };
inline constexpr int kNumModules = 5;

const char* to_string(ModuleId id);
ModuleId module_from_string(const std::string& s);

struct Param {
    std::string name;
    Tensor value;
};

// Batched training targets, keyed by name. The pipeline passes these through
// to the per-module loss closures without interpreting them.
struct TargetBatch {
    int batch = 0;
    std::map<std::string, Tensor> items;

    const Tensor& at(const std::string& key) const;
};

// One stage of the pipeline: parameters, a forward function producing
// (feature handed downstream, task head output), and a per-sample loss [B].
struct ModuleNode {
    ModuleId id{};
    std::vector<Param> params;
    bool frozen = false;
    std::function<std::pair<Tensor, Tensor>(const ModuleNode&, const std::vector<Tensor>&)> forward;
    std::function<Tensor(const Tensor&, const TargetBatch&)> loss;
};

struct InjectionSite {
    SiteId id{};
    std::vector<int> shape;  // per-sample shape of the tensor flowing through
    double default_budget = 0.0;
    std::optional<std::pair<double, double>> clamp_range;
};

struct LossBreakdown {
    std::array<Tensor, kNumModules> per_module;              // scalar batch means
    std::array<std::vector<double>, kNumModules> per_sample;  // plain copies, [B] each
    Tensor total;                                             // unit-weight sum

    double per_sample_total(int b) const;
    double per_sample_plan(int b) const;
};

struct ForwardResult {
    std::array<Tensor, kNumModules> head;
    std::array<Tensor, kNumModules> feature;
    LossBreakdown losses;
    bool has_losses = false;
};

// The 2-2-1 modular model: Track and Map read the raster, Motion fuses their
// features, Occ and Plan read Motion's feature. Noise enters at the five
// named sites; the Images site clamps the perturbed raster to its range.
class Pipeline {
public:
    std::array<ModuleNode, kNumModules> modules;
    std::vector<InjectionSite> sites;
    std::string arch_tag;

    ForwardResult forward_with_noise(const Tensor& obs, const TargetBatch* labels,
                                     const PerturbationSet* noise) const;
    ForwardResult forward(const Tensor& obs, const TargetBatch& labels) const {
        return forward_with_noise(obs, &labels, nullptr);
    }

    const std::vector<InjectionSite>& list_injection_sites() const { return sites; }
    const InjectionSite& site(SiteId id) const;

    void freeze_modules(std::span<const ModuleId> ids);
    void unfreeze_all();

    // Parameters in fixed (module, layer) order, names "module.layer".
    std::vector<std::pair<std::string, Tensor*>> parameters();
    std::vector<std::pair<std::string, const Tensor*>> parameters() const;
    std::vector<std::pair<std::string, Tensor*>> trainable_parameters();
    int parameter_count() const;
    std::uint64_t parameter_checksum() const;
};

// Weighted total loss (Eq.-style sum over module losses). Weights must be
// positive, one per module; all-ones reduces to the plain sum.
Tensor total_loss(const LossBreakdown& breakdown, const std::vector<double>& weights);

}  // namespace mwat
