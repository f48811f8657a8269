#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mwat/rng.hpp"
#include "mwat/tensor.hpp"

namespace mwat {

enum class OptKind { sgd, adam };

// First-order optimizer state. Adam moments are kept per parameter name and
// must match the parameter's shape.
struct OptimizerState {
    OptKind kind = OptKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int step_count = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// Applies one update to every (name, tensor) pair. Every parameter must have
// a gradient in `grads`; a missing one is a contract error.
void optimizer_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                    const std::map<std::string, Tensor>& grads, OptimizerState& state);

enum class Dist { uniform, normal };

// Deterministic tensor generation: same (seed, stream, shape, dist, params)
// always yields the same bits. p1/p2 are (a, b) for uniform, (mu, sigma) for
// normal.
Tensor seeded_random(std::uint64_t seed, const std::vector<int>& shape, Dist dist, double p1,
                     double p2, Stream stream = Stream::data);

// Same, drawing from an already-positioned generator.
Tensor random_tensor(Rng& rng, const std::vector<int>& shape, Dist dist, double p1, double p2);

}  // namespace mwat
