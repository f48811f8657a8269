#pragma once

#include <array>
#include <optional>

#include "mwat/common.hpp"
#include "mwat/pipeline.hpp"

namespace mwat {

struct RatioVector {
    std::array<double, kNumModules> R{};
    double mean = 0.0;
    double stddev = 0.0;  // population std over the modules
};

// Dynamic weight adaptation over module losses. Every update_period batches
// the trainer records the window's mean losses; once two windows exist, the
// loss ratios R_j = L_j(t-1)/L_j(t-2) are z-scored, exponentiated, normalized
// to sum to N, and folded into the weights with decay r:
//   W_j <- r*W_j + (1-r)*alpha_j.
// All-ones initialization plus sum(alpha) = N keeps sum(W) = N forever.
class DwaaState {
public:
    explicit DwaaState(double r = 0.2, int update_period = 100);

    // Shifts the loss history: the (t-1) slot moves to (t-2), the new window
    // means become (t-1). Values must be finite and non-negative.
    void record_window(const std::array<double, kNumModules>& window_means);

    bool ratios_available() const { return loss_prev && loss_prev2; }
    RatioVector compute_ratios() const;

    // sigma below sigma_floor switches every gamma to 1 (equal ratios carry
    // no signal); z-scores are clipped before exp.
    static std::array<double, kNumModules> compute_alphas(const RatioVector& ratios,
                                                          double sigma_floor = 1e-8,
                                                          double z_clip = 10.0);

    void update_weights(const std::array<double, kNumModules>& alphas);

    // All-ones during warmup by construction: updates only happen once two
    // windows have been recorded.
    const std::array<double, kNumModules>& current_weights() const { return W_; }
    std::vector<double> current_weights_vec() const;

    // Records a window and, when ratios are available, performs the full
    // ratio -> alpha -> weight update. Returns true when weights changed.
    bool step_window(const std::array<double, kNumModules>& window_means);

    double r() const { return r_; }
    int update_period() const { return update_period_; }
    int updates_done() const { return t_; }

    // serialization access
    const std::optional<std::array<double, kNumModules>>& history_prev() const { return loss_prev; }
    const std::optional<std::array<double, kNumModules>>& history_prev2() const { return loss_prev2; }
    void restore(const std::array<double, kNumModules>& weights,
                 const std::optional<std::array<double, kNumModules>>& prev,
                 const std::optional<std::array<double, kNumModules>>& prev2, int t);

    static constexpr double kSigmaFloor = 1e-8;
    static constexpr double kZClip = 10.0;

private:
    double r_;
    int update_period_;
    int t_ = 0;
    std::array<double, kNumModules> W_{1.0, 1.0, 1.0, 1.0, 1.0};
    std::optional<std::array<double, kNumModules>> loss_prev;
    std::optional<std::array<double, kNumModules>> loss_prev2;
};

}  // namespace mwat
