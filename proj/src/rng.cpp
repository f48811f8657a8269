#include "mwat/rng.hpp"

#include <cmath>
#include <cstdio>

#include "mwat/common.hpp"

namespace mwat {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed, Stream stream) {
    std::uint64_t x = seed ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ull);
    for (auto& w : s_) w = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) {
    if (!(a <= b)) throw ContractError("uniform: requires a <= b");
    return a + next_double() * (b - a);
}

double Rng::normal(double mu, double sigma) {
    if (!(sigma >= 0.0)) throw ContractError("normal: requires sigma >= 0");
    if (have_spare_) {
        have_spare_ = false;
        return mu + sigma * spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_double() - 1.0;
        v = 2.0 * next_double() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return mu + sigma * u * m;
}

int Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    double p = 1.0;
    int k = 0;
    do {
        ++k;
        p *= next_double();
    } while (p > limit);
    return k - 1;
}

std::vector<double> Rng::uniform_vec(std::size_t n, double a, double b) {
    std::vector<double> out(n);
    for (auto& x : out) x = uniform(a, b);
    return out;
}

std::vector<double> Rng::normal_vec(std::size_t n, double mu, double sigma) {
    std::vector<double> out(n);
    for (auto& x : out) x = normal(mu, sigma);
    return out;
}

std::vector<int> Rng::permutation(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull);
    return splitmix64(x);
}

}  // namespace mwat
