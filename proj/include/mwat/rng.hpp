#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mwat {

// Independent, named random streams. Keeping data order, parameter init,
// attack restarts and corruption draws on separate streams means e.g. an
// attack consuming extra draws cannot shift the batch order of a training run.
enum class Stream : std::uint64_t {
    data = 1,
    init = 2,
    attack = 3,
    corruption = 4,
    sim = 5,
    eval = 6,
};

// xoshiro256++ seeded through splitmix64. Uniform doubles take the top 53
// bits; normals use the Marsaglia polar transform. Both are fixed so the same
// (seed, stream) sequence reproduces bit-exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed, Stream stream = Stream::data);

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double next_double();

    // Uniform in [a, b).
    double uniform(double a, double b);

    // Normal with mean mu, stddev sigma.
    double normal(double mu, double sigma);

    // Poisson with rate lambda (Knuth's method; intended for small rates).
    int poisson(double lambda);

    std::vector<double> uniform_vec(std::size_t n, double a, double b);
    std::vector<double> normal_vec(std::size_t n, double mu, double sigma);

    // Fisher-Yates shuffle of 0..n-1.
    std::vector<int> permutation(int n);

    // Derive a decorrelated child seed, e.g. per-sample or per-episode.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt);

private:
    std::array<std::uint64_t, 4> s_{};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mwat
