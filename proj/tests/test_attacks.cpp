#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "mwat/attacks.hpp"
#include "mwat/driving.hpp"
#include "mwat/optim.hpp"

using namespace mwat;

namespace {

// Michelot's alternating projection onto the simplex: an iterative algorithm
// independent of the sort-and-threshold implementation under test.
std::vector<double> michelot_l1_projection(std::vector<double> x, double eps) {
    double n1 = 0.0;
    for (double v : x) n1 += std::abs(v);
    if (n1 <= eps) return x;
    std::vector<double> mags(x.size());
    std::vector<char> active(x.size(), 1);
    for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::abs(x[i]);
    while (true) {
        double s = 0.0;
        int cnt = 0;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (active[i]) { s += mags[i]; ++cnt; }
        const double theta = (s - eps) / cnt;
        bool changed = false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (active[i] && mags[i] - theta <= 0.0) { active[i] = 0; changed = true; }
        if (!changed) {
            std::vector<double> out(x.size(), 0.0);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (active[i]) out[i] = (x[i] > 0 ? 1.0 : -1.0) * (mags[i] - theta);
            return out;
        }
    }
}

// Fixed-budget quadratic surface L(delta) = ||A delta||^2 used as an
// analytically differentiable attack target.
class QuadraticProblem : public AttackProblem {
public:
    explicit QuadraticProblem(std::array<double, 4> a) : a_(a) {}
    std::vector<SiteId> site_ids() const override { return {SiteId::Images}; }
    std::vector<int> delta_shape(SiteId) const override { return {1, 2}; }
    int batch() const override { return 1; }
    void eval(const std::map<SiteId, Tensor>& deltas, std::vector<double>* obj,
              std::map<SiteId, Tensor>* grads) override {
        const Tensor& d = deltas.at(SiteId::Images);
        const double u = a_[0] * d[0] + a_[1] * d[1];
        const double v = a_[2] * d[0] + a_[3] * d[1];
        if (obj) *obj = {u * u + v * v};
        if (grads)
            (*grads)[SiteId::Images] =
                Tensor({1, 2}, {2 * (u * a_[0] + v * a_[2]), 2 * (u * a_[1] + v * a_[3])});
    }
    double value(double x, double y) const {
        const double u = a_[0] * x + a_[1] * y;
        const double v = a_[2] * x + a_[3] * y;
        return u * u + v * v;
    }

private:
    std::array<double, 4> a_;
};

// Problem with a constant gradient vector.
class ConstGradProblem : public AttackProblem {
public:
    explicit ConstGradProblem(std::vector<double> g) : g_(std::move(g)) {}
    std::vector<SiteId> site_ids() const override { return {SiteId::Images}; }
    std::vector<int> delta_shape(SiteId) const override { return {1, static_cast<int>(g_.size())}; }
    int batch() const override { return 1; }
    void eval(const std::map<SiteId, Tensor>& deltas, std::vector<double>* obj,
              std::map<SiteId, Tensor>* grads) override {
        const Tensor& d = deltas.at(SiteId::Images);
        double acc = 0.0;
        for (std::size_t i = 0; i < g_.size(); ++i) acc += g_[i] * d[static_cast<int>(i)];
        if (obj) *obj = {acc};
        if (grads) (*grads)[SiteId::Images] = Tensor({1, static_cast<int>(g_.size())}, g_);
    }

private:
    std::vector<double> g_;
};

struct ModelFixture {
    Dataset train;
    Pipeline model;
    Tensor obs;
    TargetBatch targets;

    ModelFixture() : model(build_reference_model(5)) {
        DatasetConfig cfg;
        cfg.seed = 31;
        cfg.n_scenarios = 40;
        auto [tr, va] = build_dataset(cfg);
        train = std::move(tr);
        obs = make_observation_batch(std::span(train.observations.data(), 8));
        targets = make_target_batch(std::span(train.labels.data(), 8));
    }

    AttackConfig base_cfg(AttackMethod m) const {
        AttackConfig cfg;
        cfg.method = m;
        cfg.steps = m == AttackMethod::fgsm ? 1 : 5;
        cfg.restarts = 2;
        cfg.budgets = default_budgets(model);
        return cfg;
    }
};

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (int i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

}  // namespace

TEST_CASE("project: linf clamp and l2 rescale") {
    Tensor d = Tensor::from_vec({0.15, -0.05});
    Tensor p = project(d, Norm::linf, 0.1);
    CHECK(p[0] == doctest::Approx(0.1));
    CHECK(p[1] == doctest::Approx(-0.05));

    Tensor e = Tensor::from_vec({1.2, 1.6});  // norm 2
    Tensor q = project(e, Norm::l2, 1.0);
    CHECK(q[0] == doctest::Approx(0.6));
    CHECK(q[1] == doctest::Approx(0.8));
}

TEST_CASE("project l1: (0.8, 0.8) onto the unit ball vs dense grid search") {
    Tensor d = Tensor::from_vec({0.8, 0.8});
    Tensor p = project(d, Norm::l1, 1.0);
    // grid at resolution 1e-3 over the ball
    double best_dist = std::numeric_limits<double>::infinity();
    double bx = 0, by = 0;
    for (int xi = -1000; xi <= 1000; ++xi) {
        const double x = xi * 1e-3;
        const double ylim = 1.0 - std::abs(x);
        for (int yi = static_cast<int>(-ylim * 1000); yi <= static_cast<int>(ylim * 1000); ++yi) {
            const double y = yi * 1e-3;
            const double dist = (x - 0.8) * (x - 0.8) + (y - 0.8) * (y - 0.8);
            if (dist < best_dist) { best_dist = dist; bx = x; by = y; }
        }
    }
    CHECK(std::abs(p[0] - bx) < 2e-3);
    CHECK(std::abs(p[1] - by) < 2e-3);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("projections: budget invariant and idempotence over 1000 random vectors per norm") {
    Rng rng(404);
    for (Norm p : {Norm::l1, Norm::l2, Norm::linf}) {
        for (int trial = 0; trial < 1000; ++trial) {
            const int dim = 1 + static_cast<int>(rng.next_u64() % 16);
            const double eps = rng.uniform(0.05, 2.0);
            Tensor d = Tensor(std::vector<int>{dim}, rng.uniform_vec(static_cast<std::size_t>(dim), -3.0, 3.0));
            Tensor q = project(d, p, eps);
            CHECK(lp_norm(q.data(), p) <= eps + 1e-9);
            Tensor q2 = project(q, p, eps);
            for (int i = 0; i < dim; ++i) CHECK(std::abs(q2[i] - q[i]) <= 1e-12);
            // feasible input returned unchanged
            Tensor small = project(Tensor(std::vector<int>{dim}, std::vector<double>(static_cast<std::size_t>(dim), 0.0)), p, eps);
            for (int i = 0; i < dim; ++i) CHECK(small[i] == 0.0);
        }
    }
}

TEST_CASE("project l1 agrees with the Michelot oracle on dims 2..5") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const int dim = 2 + static_cast<int>(rng.next_u64() % 4);
        const double eps = rng.uniform(0.1, 1.5);
        std::vector<double> x = rng.uniform_vec(static_cast<std::size_t>(dim), -2.0, 2.0);
        Tensor p = project(Tensor(std::vector<int>{dim}, x), Norm::l1, eps);
        std::vector<double> q = michelot_l1_projection(x, eps);
        for (int i = 0; i < dim; ++i) CHECK(std::abs(p[i] - q[static_cast<std::size_t>(i)]) < 2e-3);
    }
}

TEST_CASE("fgsm: sign step with sign(0) = 0") {
    ConstGradProblem problem({0.3, -0.5, 0.0});
    AttackConfig cfg;
    cfg.method = AttackMethod::fgsm;
    cfg.steps = 1;
    cfg.budgets = {{SiteId::Images, 0.1}};
    Rng rng(1, Stream::attack);
    PerturbationSet set = attack_engine(problem, cfg, rng);
    const Tensor& d = set.deltas.at(SiteId::Images);
    CHECK(d[0] == doctest::Approx(0.1));
    CHECK(d[1] == doctest::Approx(-0.1));
    CHECK(d[2] == 0.0);
}

TEST_CASE("fgsm: eps 0 leaves losses unchanged") {
    ModelFixture fx;
    AttackConfig cfg = fx.base_cfg(AttackMethod::fgsm);
    for (auto& [id, eps] : cfg.budgets) eps = 0.0;
    Rng rng(2, Stream::attack);
    PerturbationSet set = fgsm(fx.model, fx.obs, fx.targets, cfg, rng);
    for (const auto& [id, d] : set.deltas) CHECK(max_abs(d) == 0.0);
    ForwardResult clean = fx.model.forward(fx.obs, fx.targets);
    ForwardResult attacked = fx.model.forward_with_noise(fx.obs, &fx.targets, &set);
    CHECK(clean.losses.total.item() == attacked.losses.total.item());
}

TEST_CASE("fgsm on the 1-d quadratic surrogate follows the analytic ascent direction") {
    // L(d) = (d-1)^2, gradient at 0 is -2, so the maximizing step is -eps.
    class Quad1d : public AttackProblem {
    public:
        std::vector<SiteId> site_ids() const override { return {SiteId::Images}; }
        std::vector<int> delta_shape(SiteId) const override { return {1, 1}; }
        int batch() const override { return 1; }
        void eval(const std::map<SiteId, Tensor>& deltas, std::vector<double>* obj,
                  std::map<SiteId, Tensor>* grads) override {
            const double d = deltas.at(SiteId::Images)[0];
            if (obj) *obj = {(d - 1.0) * (d - 1.0)};
            if (grads) (*grads)[SiteId::Images] = Tensor({1, 1}, {2.0 * (d - 1.0)});
        }
    } problem;
    AttackConfig cfg;
    cfg.method = AttackMethod::fgsm;
    cfg.steps = 1;
    cfg.budgets = {{SiteId::Images, 0.25}};
    Rng rng(3, Stream::attack);
    PerturbationSet set = attack_engine(problem, cfg, rng);
    const double d = set.deltas.at(SiteId::Images)[0];
    CHECK(std::abs(d) == doctest::Approx(0.25));
    CHECK(d == doctest::Approx(-0.25));
    // and the loss at the returned point exceeds the clean loss
    CHECK((d - 1.0) * (d - 1.0) > 1.0);
}

TEST_CASE("mifgsm: steps=1, mu=0 equals one fgsm step with the same step size") {
    ConstGradProblem p1({0.4, -0.2, 0.7});
    ConstGradProblem p2({0.4, -0.2, 0.7});
    AttackConfig mi;
    mi.method = AttackMethod::mifgsm;
    mi.steps = 1;
    mi.momentum = 0.0;
    mi.budgets = {{SiteId::Images, 0.1}};
    mi.step_size = 0.1;  // match fgsm's eps-sized step
    AttackConfig fg;
    fg.method = AttackMethod::fgsm;
    fg.steps = 1;
    fg.budgets = {{SiteId::Images, 0.1}};
    Rng r1(4, Stream::attack), r2(4, Stream::attack);
    PerturbationSet a = attack_engine(p1, mi, r1);
    PerturbationSet b = attack_engine(p2, fg, r2);
    for (int i = 0; i < 3; ++i)
        CHECK(a.deltas.at(SiteId::Images)[i] == doctest::Approx(b.deltas.at(SiteId::Images)[i]));
}

TEST_CASE("mifgsm: constant gradient drives delta to the linf corner") {
    // five steps of eps/5 in a fixed direction accumulate to eps*sign(g)
    ConstGradProblem problem({1.0, -2.0});
    AttackConfig cfg;
    cfg.method = AttackMethod::mifgsm;
    cfg.steps = 5;
    cfg.budgets = {{SiteId::Images, 0.1}};
    Rng rng(5, Stream::attack);
    PerturbationSet set = attack_engine(problem, cfg, rng);
    CHECK(set.deltas.at(SiteId::Images)[0] == doctest::Approx(0.1));
    CHECK(set.deltas.at(SiteId::Images)[1] == doctest::Approx(-0.1));
}

TEST_CASE("pgd: steps=0 returns a projected random init") {
    ModelFixture fx;
    AttackConfig cfg = fx.base_cfg(AttackMethod::pgd);
    cfg.steps = 0;
    cfg.restarts = 1;
    Rng rng(6, Stream::attack);
    PerturbationSet set = pgd(fx.model, fx.obs, fx.targets, cfg, rng);
    for (const auto& [id, d] : set.deltas) {
        const double eps = set.budgets.at(id);
        const int rows = d.shape()[0];
        const int per = d.size() / rows;
        bool any_nonzero = false;
        for (int r = 0; r < rows; ++r) {
            const auto row = d.data().subspan(static_cast<std::size_t>(r) * per, static_cast<std::size_t>(per));
            CHECK(lp_norm(row, Norm::linf) <= eps + 1e-9);
            if (lp_norm(row, Norm::linf) > 0.0) any_nonzero = true;
        }
        if (eps > 0.0) CHECK(any_nonzero);
    }
}

TEST_CASE("pgd reaches 95% of the exhaustive grid maximum on quadratic surrogates") {
    Rng seed_rng(777);
    int passes = 0;
    const int trials = 10;
    for (int trial = 0; trial < trials; ++trial) {
        std::array<double, 4> a{};
        for (auto& v : a) v = seed_rng.uniform(-2.0, 2.0);
        QuadraticProblem problem(a);
        AttackConfig cfg;
        cfg.method = AttackMethod::pgd;
        cfg.steps = 5;
        cfg.restarts = 5;
        cfg.budgets = {{SiteId::Images, 0.1}};
        Rng rng(static_cast<std::uint64_t>(trial), Stream::attack);
        PerturbationSet set = attack_engine(problem, cfg, rng);
        const Tensor& d = set.deltas.at(SiteId::Images);
        const double got = problem.value(d[0], d[1]);
        double grid_max = 0.0;
        for (int i = 0; i <= 40; ++i)
            for (int j = 0; j <= 40; ++j)
                grid_max = std::max(grid_max, problem.value(-0.1 + i * 0.005, -0.1 + j * 0.005));
        if (got >= 0.95 * grid_max) ++passes;
    }
    CHECK(passes == trials);
}

TEST_CASE("pgd: returned objective is the max over restarts and more steps never hurt") {
    QuadraticProblem problem({1.0, 0.3, -0.4, 1.2});
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 4;
    cfg.budgets = {{SiteId::Images, 0.1}};

    auto best_value = [&](int steps, std::uint64_t seed) {
        cfg.steps = steps;
        Rng rng(seed, Stream::attack);
        PerturbationSet set = attack_engine(problem, cfg, rng);
        const Tensor& d = set.deltas.at(SiteId::Images);
        return problem.value(d[0], d[1]);
    };
    // restart argmax: value with 4 restarts >= each single restart's value
    cfg.steps = 3;
    Rng rng(9, Stream::attack);
    PerturbationSet joint = attack_engine(problem, cfg, rng);
    const double joint_val =
        problem.value(joint.deltas.at(SiteId::Images)[0], joint.deltas.at(SiteId::Images)[1]);
    Rng rng_single(9, Stream::attack);
    for (int r = 0; r < 4; ++r) {
        AttackConfig one = cfg;
        one.restarts = 1;
        PerturbationSet s = attack_engine(problem, one, rng_single);
        CHECK(joint_val >= problem.value(s.deltas.at(SiteId::Images)[0],
                                         s.deltas.at(SiteId::Images)[1]) - 1e-12);
    }
    // monotone in steps under shared restart initializations
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        CHECK(best_value(7, seed) >= best_value(3, seed) - 1e-12);
}

TEST_CASE("attack generation never mutates model parameters") {
    ModelFixture fx;
    const std::uint64_t before = fx.model.parameter_checksum();
    Rng rng(10, Stream::attack);
    AttackConfig cfg = fx.base_cfg(AttackMethod::pgd);
    cfg.restarts = 2;
    module_wise_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    sub_loss_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    plan_targeted_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    CHECK(fx.model.parameter_checksum() == before);
}

TEST_CASE("module_wise attack: default budgets and per-sample invariants") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 2;
    Rng rng(11, Stream::attack);
    PerturbationSet set = module_wise_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    REQUIRE(set.deltas.size() == kNumSites);
    CHECK(set.budgets.at(SiteId::Images) == doctest::Approx(0.8));
    CHECK(set.budgets.at(SiteId::TrackMotion) == doctest::Approx(0.1));
    CHECK(set.budgets.at(SiteId::MotionPlan) == doctest::Approx(0.1));
    for (const auto& [id, d] : set.deltas) {
        const int rows = d.shape()[0];
        const int per = d.size() / rows;
        for (int r = 0; r < rows; ++r)
            CHECK(lp_norm(d.data().subspan(static_cast<std::size_t>(r) * per, static_cast<std::size_t>(per)),
                          Norm::linf) <= set.budgets.at(id) + 1e-9);
    }
}

TEST_CASE("module_wise attack beats an equal-budget random perturbation on average") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 1;
    Rng rng(12, Stream::attack);
    PerturbationSet adv = module_wise_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    ForwardResult under_adv = fx.model.forward_with_noise(fx.obs, &fx.targets, &adv);

    Rng rrng(13, Stream::attack);
    PerturbationSet rnd;
    rnd.norm = Norm::linf;
    for (const auto& [id, d] : adv.deltas) {
        const double eps = adv.budgets.at(id);
        rnd.deltas[id] = random_tensor(rrng, d.shape(), Dist::uniform, -eps, eps);
        rnd.budgets[id] = eps;
    }
    ForwardResult under_rnd = fx.model.forward_with_noise(fx.obs, &fx.targets, &rnd);
    CHECK(under_adv.losses.total.item() >= under_rnd.losses.total.item());
}

TEST_CASE("sub_loss attack: zero budget keeps a site at zero; single site reduces to plan pgd") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 2;
    cfg.budgets = default_budgets(fx.model);
    cfg.budgets[SiteId::MapMotion] = 0.0;
    Rng rng(14, Stream::attack);
    PerturbationSet set = sub_loss_attack(fx.model, fx.obs, fx.targets, cfg, rng);
    CHECK(max_abs(set.deltas.at(SiteId::MapMotion)) == 0.0);

    // only MotionPlan budgeted: sub-loss objective on that site is the plan
    // loss, so the result matches a plan-objective pgd run
    AttackConfig solo;
    solo.method = AttackMethod::pgd;
    solo.restarts = 2;
    solo.budgets = {{SiteId::MotionPlan, 0.1}};
    Rng r1(15, Stream::attack), r2(15, Stream::attack);
    PerturbationSet via_sub = sub_loss_attack(fx.model, fx.obs, fx.targets, solo, r1);
    AttackConfig plan_cfg = solo;
    plan_cfg.objective = Objective::plan_loss;
    PerturbationSet via_plan = run_attack(fx.model, fx.obs, fx.targets, plan_cfg, r2);
    // same gradients and same rng stream: identical trajectories, but restart
    // selection in sub_loss uses the total; compare the deltas row by row
    const Tensor& a = via_sub.deltas.at(SiteId::MotionPlan);
    const Tensor& b = via_plan.deltas.at(SiteId::MotionPlan);
    int equal_rows = 0;
    const int per = a.size() / a.shape()[0];
    for (int r = 0; r < a.shape()[0]; ++r) {
        bool same = true;
        for (int i = 0; i < per; ++i)
            if (a[r * per + i] != b[r * per + i]) { same = false; break; }
        equal_rows += same;
    }
    CHECK(equal_rows >= a.shape()[0] - 1);  // selection metric may differ on ties
}

TEST_CASE("plan_targeted equals module_wise when only the plan loss varies") {
    // with a single budgeted site feeding Plan alone, total and plan
    // objectives have identical gradients up to the constant other losses
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 1;
    cfg.steps = 3;
    cfg.budgets = {{SiteId::MotionPlan, 0.1}};
    Rng r1(16, Stream::attack), r2(16, Stream::attack);
    PerturbationSet a = plan_targeted_attack(fx.model, fx.obs, fx.targets, cfg, r1);
    PerturbationSet b = module_wise_attack(fx.model, fx.obs, fx.targets, cfg, r2);
    const Tensor& da = a.deltas.at(SiteId::MotionPlan);
    const Tensor& db = b.deltas.at(SiteId::MotionPlan);
    for (int i = 0; i < da.size(); ++i) CHECK(da[i] == doctest::Approx(db[i]).epsilon(1e-9));
}

TEST_CASE("transfer attack: surrogate == victim matches white-box; zero eps is clean") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 2;
    cfg.budgets = {{SiteId::Images, 0.2}};
    Rng r1(17, Stream::attack), r2(17, Stream::attack);
    LossBreakdown transferred = transfer_attack(fx.model, fx.model, fx.obs, fx.targets, cfg, r1);
    PerturbationSet wb = run_attack(fx.model, fx.obs, fx.targets, cfg, r2);
    ForwardResult direct = fx.model.forward_with_noise(fx.obs, &fx.targets, &wb);
    CHECK(transferred.total.item() == doctest::Approx(direct.losses.total.item()));

    AttackConfig zero = cfg;
    zero.budgets = {{SiteId::Images, 0.0}};
    Rng r3(18, Stream::attack);
    LossBreakdown clean_bd = transfer_attack(fx.model, fx.model, fx.obs, fx.targets, zero, r3);
    ForwardResult clean = fx.model.forward(fx.obs, fx.targets);
    CHECK(clean_bd.total.item() == clean.losses.total.item());

    AttackConfig bad = cfg;
    bad.budgets[SiteId::MotionPlan] = 0.1;
    Rng r4(19, Stream::attack);
    CHECK_THROWS_AS(transfer_attack(fx.model, fx.model, fx.obs, fx.targets, bad, r4), ContractError);
}

TEST_CASE("universal noise: budget, determinism, and gain over random noise") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.budgets = {{SiteId::Images, 0.2}};
    Rng r1(20, Stream::attack), r2(20, Stream::attack);
    Tensor u1 = universal_noise(fx.model, fx.train, cfg, 2, 8, r1);
    Tensor u2 = universal_noise(fx.model, fx.train, cfg, 2, 8, r2);
    CHECK(u1.checksum() == u2.checksum());
    CHECK(lp_norm(u1.data(), Norm::linf) <= 0.2 + 1e-9);

    auto mean_loss = [&](const Tensor& delta) {
        PerturbationSet set;
        set.deltas[SiteId::Images] = delta;
        set.budgets[SiteId::Images] = 0.2;
        double total = 0.0;
        int count = 0;
        for (int start = 0; start < fx.train.size(); start += 8) {
            const int n = std::min(8, fx.train.size() - start);
            Tensor obs = make_observation_batch(std::span(fx.train.observations.data() + start,
                                                          static_cast<std::size_t>(n)));
            TargetBatch t = make_target_batch(std::span(fx.train.labels.data() + start,
                                                        static_cast<std::size_t>(n)));
            ForwardResult fr = fx.model.forward_with_noise(obs, &t, &set);
            total += fr.losses.total.item() * n;
            count += n;
        }
        return total / count;
    };
    Rng rrng(21, Stream::attack);
    Tensor random_delta = random_tensor(rrng, u1.shape(), Dist::uniform, -0.2, 0.2);
    CHECK(mean_loss(u1) >= mean_loss(random_delta));

    Dataset empty;
    Rng r5(22, Stream::attack);
    CHECK_THROWS_AS(universal_noise(fx.model, empty, cfg, 1, 8, r5), ContractError);
}

TEST_CASE("perturbation serialization round-trips") {
    ModelFixture fx;
    AttackConfig cfg;
    cfg.method = AttackMethod::pgd;
    cfg.restarts = 1;
    cfg.steps = 2;
    cfg.budgets = default_budgets(fx.model);
    Rng rng(23, Stream::attack);
    PerturbationSet set = module_wise_attack(fx.model, fx.obs, fx.targets, cfg, rng);

    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "mwat_test_delta.mwps";
    save_perturbation(p, set);
    PerturbationSet loaded = load_perturbation(p);
    fs::remove(p);
    REQUIRE(loaded.deltas.size() == set.deltas.size());
    for (const auto& [id, d] : set.deltas) {
        CHECK(loaded.deltas.at(id).checksum() == d.checksum());
        CHECK(loaded.budgets.at(id) == set.budgets.at(id));
    }
    CHECK(loaded.norm == set.norm);
}

TEST_CASE("config validation") {
    AttackConfig cfg;
    cfg.method = AttackMethod::fgsm;
    cfg.steps = 3;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg.steps = 1;
    cfg.budgets = {{SiteId::Images, -0.1}};
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg.budgets = {{SiteId::Images, 0.1}};
    CHECK_NOTHROW(cfg.validate());
    cfg.method = AttackMethod::pgd;
    cfg.steps = 5;
    cfg.step_fraction = 3.0;  // violates step <= 2*eps
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}
