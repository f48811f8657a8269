#include "mwat/optim.hpp"

#include <cmath>

#include "mwat/common.hpp"

namespace mwat {

void optimizer_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                    const std::map<std::string, Tensor>& grads, OptimizerState& state) {
    state.step_count += 1;
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw ContractError("optimizer_step: missing gradient for '" + name + "'");
        const Tensor& g = it->second;
        if (!g.same_shape(*p))
            throw DimensionError("optimizer_step: gradient shape " + g.shape_str() +
                                 " does not match parameter '" + name + "' " + p->shape_str());
        auto pd = p->data();
        const auto gd = g.data();
        if (state.kind == OptKind::sgd) {
            for (int i = 0; i < p->size(); ++i)
                pd[static_cast<std::size_t>(i)] -= state.learning_rate * gd[static_cast<std::size_t>(i)];
            continue;
        }
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(static_cast<std::size_t>(p->size()), 0.0);
        if (v.empty()) v.assign(static_cast<std::size_t>(p->size()), 0.0);
        if (m.size() != static_cast<std::size_t>(p->size()))
            throw ContractError("optimizer_step: moment shape drifted for '" + name + "'");
        const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
        const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
        for (int i = 0; i < p->size(); ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gd[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gd[k] * gd[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            pd[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

Tensor random_tensor(Rng& rng, const std::vector<int>& shape, Dist dist, double p1, double p2) {
    const std::size_t n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<double> data;
    if (dist == Dist::uniform) {
        if (!(p1 < p2)) throw ContractError("random_tensor: uniform requires a < b");
        data = rng.uniform_vec(n, p1, p2);
    } else {
        if (!(p2 > 0.0)) throw ContractError("random_tensor: normal requires sigma > 0");
        data = rng.normal_vec(n, p1, p2);
    }
    return Tensor(shape, std::move(data));
}

Tensor seeded_random(std::uint64_t seed, const std::vector<int>& shape, Dist dist, double p1,
                     double p2, Stream stream) {
    Rng rng(seed, stream);
    return random_tensor(rng, shape, dist, p1, p2);
}

}  // namespace mwat
