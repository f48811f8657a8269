#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mwat/dwaa.hpp"
#include "mwat/rng.hpp"

using namespace mwat;

namespace {

using Arr = std::array<double, kNumModules>;

double sum_of(const Arr& a) {
    double s = 0.0;
    for (double v : a) s += v;
    return s;
}

}  // namespace

TEST_CASE("warmup: fresh state, first window, and unchanged weights") {
    DwaaState st(0.2, 100);
    const Arr ones{1, 1, 1, 1, 1};
    CHECK(st.current_weights() == ones);

    CHECK(!st.step_window({1.0, 2.0, 3.0, 4.0, 5.0}));  // first window: ratios unavailable
    CHECK(st.current_weights() == ones);
    CHECK(!st.ratios_available());
    CHECK(st.step_window({1.0, 2.0, 3.0, 4.0, 5.0}));  // second window enables updates
}

TEST_CASE("two identical windows give unit ratios") {
    DwaaState st;
    st.record_window({2, 2, 2, 2, 2});
    st.record_window({2, 2, 2, 2, 2});
    RatioVector rv = st.compute_ratios();
    for (double r : rv.R) CHECK(r == doctest::Approx(1.0));
    CHECK(rv.stddev == doctest::Approx(0.0));
}

TEST_CASE("hand-evaluated ratio case: (1..5) over all-ones") {
    DwaaState st;
    st.record_window({1, 1, 1, 1, 1});
    st.record_window({1, 2, 3, 4, 5});
    RatioVector rv = st.compute_ratios();
    for (int j = 0; j < kNumModules; ++j) CHECK(rv.R[static_cast<std::size_t>(j)] == doctest::Approx(j + 1.0));
    CHECK(rv.mean == doctest::Approx(3.0));
    CHECK(rv.stddev == doctest::Approx(std::sqrt(2.0)));

    // z-scores (-sqrt2, -1/sqrt2, 0, 1/sqrt2, sqrt2); alpha = 5*exp(z)/sum
    Arr alpha = DwaaState::compute_alphas(rv);
    const double s2 = std::sqrt(2.0);
    const std::array<double, 5> z{-s2, -1.0 / s2, 0.0, 1.0 / s2, s2};
    double denom = 0.0;
    for (double v : z) denom += std::exp(v);
    for (int j = 0; j < kNumModules; ++j)
        CHECK(alpha[static_cast<std::size_t>(j)] ==
              doctest::Approx(5.0 * std::exp(z[static_cast<std::size_t>(j)]) / denom).epsilon(1e-12));
}

TEST_CASE("vanished previous loss is guarded") {
    DwaaState st;
    st.record_window({0.0, 1, 1, 1, 1});
    st.record_window({3.0, 1, 1, 1, 1});
    RatioVector rv = st.compute_ratios();
    CHECK(std::isfinite(rv.R[0]));
    CHECK(rv.R[0] == doctest::Approx(3.0 / 1e-12));
}

TEST_CASE("NaN window loss raises") {
    DwaaState st;
    CHECK_THROWS_AS(st.record_window({std::nan(""), 1, 1, 1, 1}), NumericError);
    CHECK_THROWS_AS(st.record_window({-1.0, 1, 1, 1, 1}), ContractError);
}

TEST_CASE("alpha algebra: equal ratios, normalization, clipping") {
    RatioVector equal;
    equal.R = {1, 1, 1, 1, 1};
    equal.mean = 1.0;
    equal.stddev = 0.0;
    Arr a = DwaaState::compute_alphas(equal);
    for (double v : a) CHECK(v == doctest::Approx(1.0));

    Rng rng(55);
    for (int trial = 0; trial < 10000; ++trial) {
        RatioVector rv;
        double mean = 0.0;
        for (auto& v : rv.R) { v = rng.uniform(0.01, 20.0); mean += v; }
        rv.mean = mean / kNumModules;
        double var = 0.0;
        for (double v : rv.R) var += (v - rv.mean) * (v - rv.mean);
        rv.stddev = std::sqrt(var / kNumModules);
        Arr alpha = DwaaState::compute_alphas(rv);
        CHECK(std::abs(sum_of(alpha) - 5.0) <= 1e-12);
        for (double v : alpha) CHECK(v > 0.0);
    }

    // extreme ratio spread stays finite thanks to the z clip
    RatioVector wild;
    wild.R = {1e9, 1, 1, 1, 1};
    wild.mean = (1e9 + 4) / 5.0;
    double var = 0.0;
    for (double v : wild.R) var += (v - wild.mean) * (v - wild.mean);
    wild.stddev = std::sqrt(var / 5.0);
    for (double v : DwaaState::compute_alphas(wild)) CHECK(std::isfinite(v));
}

TEST_CASE("weight update recurrence") {
    DwaaState st(0.2, 100);
    st.update_weights({1, 1, 1, 1, 1});
    for (double w : st.current_weights()) CHECK(w == doctest::Approx(1.0));  // fixed point

    DwaaState st2(0.2, 100);
    st2.update_weights({1.1, 1.1, 1.1, 1.1, 0.6});
    CHECK(st2.current_weights()[0] == doctest::Approx(1.08));  // 0.2*1 + 0.8*1.1

    // sum preserved under any alpha with sum 5
    DwaaState st3(0.3, 100);
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        Arr alpha{};
        double s = 0.0;
        for (auto& v : alpha) { v = rng.uniform(0.1, 2.0); s += v; }
        for (auto& v : alpha) v *= 5.0 / s;
        st3.update_weights(alpha);
        CHECK(std::abs(sum_of(st3.current_weights()) - 5.0) < 1e-9);
    }
}

TEST_CASE("sum(W) stays 5 over ten thousand updates from all-ones") {
    DwaaState st(0.2, 100);
    Rng rng(88);
    for (int i = 0; i < 10000; ++i) {
        Arr next{};
        for (auto& v : next) v = rng.uniform(0.05, 3.0);
        st.step_window(next);
        for (double w : st.current_weights()) {
            CHECK(w > 0.0);
            CHECK(w < 5.0);
        }
    }
    CHECK(std::abs(sum_of(st.current_weights()) - 5.0) <= 1e-6);
}

TEST_CASE("identical loss streams keep W at all-ones") {
    DwaaState st(0.2, 100);
    Rng rng(99);
    for (int i = 0; i < 500; ++i) {
        const double v = rng.uniform(0.1, 2.0);
        st.step_window({v, v, v, v, v});
    }
    for (double w : st.current_weights()) CHECK(std::abs(w - 1.0) <= 1e-9);
}

TEST_CASE("permutation equivariance of the weight trajectory") {
    const std::array<int, 5> perm{3, 0, 4, 1, 2};
    DwaaState a(0.2, 100), b(0.2, 100);
    Rng rng(111);
    for (int i = 0; i < 50; ++i) {
        Arr w{};
        for (auto& v : w) v = rng.uniform(0.05, 2.0);
        Arr wp{};
        for (int j = 0; j < 5; ++j) wp[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
        a.step_window(w);
        b.step_window(wp);
    }
    for (int j = 0; j < 5; ++j)
        CHECK(b.current_weights()[static_cast<std::size_t>(j)] ==
              doctest::Approx(a.current_weights()[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]).epsilon(1e-12));
}

TEST_CASE("monotone response: raising one ratio never lowers its alpha") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        RatioVector rv;
        for (auto& v : rv.R) v = rng.uniform(0.2, 3.0);
        auto finalize = [](RatioVector& r) {
            double mean = 0.0;
            for (double v : r.R) mean += v;
            r.mean = mean / 5.0;
            double var = 0.0;
            for (double v : r.R) var += (v - r.mean) * (v - r.mean);
            r.stddev = std::sqrt(var / 5.0);
        };
        finalize(rv);
        Arr base = DwaaState::compute_alphas(rv);
        RatioVector bumped = rv;
        bumped.R[2] += rng.uniform(0.01, 1.0);
        finalize(bumped);
        Arr after = DwaaState::compute_alphas(bumped);
        CHECK(after[2] >= base[2] - 1e-9);
    }
}

TEST_CASE("slowest-declining module gains weight (synthetic loss streams)") {
    // every module's loss decays 20% per window except Plan's, which stalls
    DwaaState st(0.2, 100);
    Arr losses{1.0, 1.0, 1.0, 1.0, 1.0};
    for (int i = 0; i < 30; ++i) {
        st.step_window(losses);
        for (int j = 0; j < 4; ++j) losses[static_cast<std::size_t>(j)] *= 0.8;
        losses[4] *= 0.995;
    }
    const auto& W = st.current_weights();
    CHECK(W[4] > 1.0);
    for (int j = 0; j < 4; ++j) CHECK(W[static_cast<std::size_t>(j)] < W[4]);
}
