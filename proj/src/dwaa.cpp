#include "mwat/dwaa.hpp"

#include <algorithm>
#include <cmath>

namespace mwat {

DwaaState::DwaaState(double r, int update_period) : r_(r), update_period_(update_period) {
    if (!(r >= 0.0 && r < 1.0)) throw ContractError("dwaa: decay r must be in [0,1)");
    if (update_period <= 0) throw ContractError("dwaa: update_period must be positive");
}

void DwaaState::record_window(const std::array<double, kNumModules>& window_means) {
    for (double v : window_means) {
        if (!std::isfinite(v)) throw NumericError("dwaa: non-finite window loss");
        if (v < 0.0) throw ContractError("dwaa: window losses must be non-negative");
    }
    loss_prev2 = loss_prev;
    loss_prev = window_means;
}

RatioVector DwaaState::compute_ratios() const {
    if (!ratios_available()) throw ContractError("dwaa: ratios need two recorded windows");
    RatioVector out;
    for (int j = 0; j < kNumModules; ++j) {
        const auto i = static_cast<std::size_t>(j);
        out.R[i] = (*loss_prev)[i] / std::max((*loss_prev2)[i], 1e-12);
    }
    double mean = 0.0;
    for (double v : out.R) mean += v;
    mean /= kNumModules;
    double var = 0.0;
    for (double v : out.R) var += (v - mean) * (v - mean);
    out.mean = mean;
    out.stddev = std::sqrt(var / kNumModules);
    return out;
}

std::array<double, kNumModules> DwaaState::compute_alphas(const RatioVector& ratios,
                                                          double sigma_floor, double z_clip) {
    std::array<double, kNumModules> gamma{};
    if (ratios.stddev < sigma_floor) {
        gamma.fill(1.0);
    } else {
        for (int j = 0; j < kNumModules; ++j) {
            const auto i = static_cast<std::size_t>(j);
            const double z = std::clamp((ratios.R[i] - ratios.mean) / ratios.stddev, -z_clip, z_clip);
            gamma[i] = std::exp(z);
        }
    }
    double total = 0.0;
    for (double g : gamma) total += g;
    std::array<double, kNumModules> alpha{};
    for (int j = 0; j < kNumModules; ++j)
        alpha[static_cast<std::size_t>(j)] = kNumModules * gamma[static_cast<std::size_t>(j)] / total;
    return alpha;
}

void DwaaState::update_weights(const std::array<double, kNumModules>& alphas) {
    for (int j = 0; j < kNumModules; ++j) {
        const auto i = static_cast<std::size_t>(j);
        W_[i] = r_ * W_[i] + (1.0 - r_) * alphas[i];
    }
    t_ += 1;
}

std::vector<double> DwaaState::current_weights_vec() const {
    return std::vector<double>(W_.begin(), W_.end());
}

bool DwaaState::step_window(const std::array<double, kNumModules>& window_means) {
    record_window(window_means);
    if (!ratios_available()) return false;
    update_weights(compute_alphas(compute_ratios(), kSigmaFloor, kZClip));
    return true;
}

void DwaaState::restore(const std::array<double, kNumModules>& weights,
                        const std::optional<std::array<double, kNumModules>>& prev,
                        const std::optional<std::array<double, kNumModules>>& prev2, int t) {
    W_ = weights;
    loss_prev = prev;
    loss_prev2 = prev2;
    t_ = t;
}

}  // namespace mwat
