#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mwat/driving.hpp"
#include "mwat/perturbation.hpp"
#include "mwat/pipeline.hpp"
#include "mwat/rng.hpp"

namespace mwat {

enum class AttackMethod { fgsm, mifgsm, pgd };
enum class Objective { total_loss, sub_loss, plan_loss };

const char* to_string(AttackMethod m);
const char* to_string(Objective o);
AttackMethod attack_method_from_string(const std::string& s);
Objective objective_from_string(const std::string& s);

struct AttackConfig {
    AttackMethod method = AttackMethod::pgd;
    Norm norm = Norm::linf;
    std::map<SiteId, double> budgets;   // sites not listed are unperturbed
    int steps = 5;
    double step_fraction = 0.2;         // step size = eps * fraction, i.e. eps/5
    std::optional<double> step_size;    // absolute override applied to every site
    int restarts = 5;
    double momentum = 1.0;              // MI-FGSM mu
    Objective objective = Objective::total_loss;
    std::uint64_t seed = 0;

    void validate() const;
    double step_for(double eps) const;
};

// Projection onto the eps-ball of the given norm, treating the tensor as one
// flat vector. linf clamps per coordinate, l2 rescales, l1 uses the
// sort-and-threshold simplex projection. Idempotent; feasible input returned
// unchanged.
Tensor project(const Tensor& delta, Norm p, double eps);
// Same, applied independently to each of the leading-dimension rows.
void project_rows_inplace(Tensor& delta, int rows, Norm p, double eps);

double lp_norm(std::span<const double> v, Norm p);

// Objective surface for the attack engine. Deltas are batch-shaped; eval
// returns one objective per sample and, when asked, the gradient per site.
class AttackProblem {
public:
    virtual ~AttackProblem() = default;
    virtual std::vector<SiteId> site_ids() const = 0;
    virtual std::vector<int> delta_shape(SiteId id) const = 0;  // batched shape
    virtual int batch() const = 0;
    virtual void eval(const std::map<SiteId, Tensor>& deltas, std::vector<double>* per_sample_obj,
                      std::map<SiteId, Tensor>* grads) = 0;
};

// Runs cfg.method on the problem. PGD keeps the best-objective iterate per
// sample over all visited points and restarts; FGSM/MI-FGSM are deterministic
// single-start methods and return their final iterate.
PerturbationSet attack_engine(AttackProblem& problem, const AttackConfig& cfg, Rng& rng);

// White-box attacks against the pipeline at the configured sites.
PerturbationSet fgsm(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                     const AttackConfig& cfg, Rng& rng);
PerturbationSet mifgsm(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                       const AttackConfig& cfg, Rng& rng);
PerturbationSet pgd(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                    const AttackConfig& cfg, Rng& rng);
PerturbationSet run_attack(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                           const AttackConfig& cfg, Rng& rng);

// The three adaptive attacks. module_wise doubles as the trainer's inner
// maximization: all five sites, total loss objective.
PerturbationSet module_wise_attack(const Pipeline& model, const Tensor& obs,
                                   const TargetBatch& targets, AttackConfig cfg, Rng& rng);
// Each site attacks only the loss of the module consuming it: Images -> Track,
// TrackMotion/MapMotion -> Motion, MotionOcc -> Occ, MotionPlan -> Plan.
PerturbationSet sub_loss_attack(const Pipeline& model, const Tensor& obs,
                                const TargetBatch& targets, AttackConfig cfg, Rng& rng);
PerturbationSet plan_targeted_attack(const Pipeline& model, const Tensor& obs,
                                     const TargetBatch& targets, AttackConfig cfg, Rng& rng);

// Black-box transfer: generate an Images-only perturbation on the surrogate,
// apply it to the victim, return the victim's losses under it.
LossBreakdown transfer_attack(const Pipeline& surrogate, const Pipeline& victim, const Tensor& obs,
                              const TargetBatch& targets, const AttackConfig& cfg, Rng& rng,
                              PerturbationSet* out_delta = nullptr);

// Single image-space noise optimized over the whole dataset by projected
// gradient ascent on the total loss; applied to every sample by broadcast.
Tensor universal_noise(const Pipeline& model, const Dataset& data, const AttackConfig& cfg,
                       int epochs, int batch_size, Rng& rng);

// Fills unset budgets with the pipeline's per-site defaults.
std::map<SiteId, double> default_budgets(const Pipeline& model);

}  // namespace mwat
