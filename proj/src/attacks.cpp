#include "mwat/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "mwat/optim.hpp"

namespace mwat {

const char* to_string(AttackMethod m) {
    switch (m) {
        case AttackMethod::fgsm: return "fgsm";
        case AttackMethod::mifgsm: return "mifgsm";
        case AttackMethod::pgd: return "pgd";
    }
    return "?";
}

const char* to_string(Objective o) {
    switch (o) {
        case Objective::total_loss: return "total_loss";
        case Objective::sub_loss: return "sub_loss";
        case Objective::plan_loss: return "plan_loss";
    }
    return "?";
}

AttackMethod attack_method_from_string(const std::string& s) {
    if (s == "fgsm") return AttackMethod::fgsm;
    if (s == "mifgsm") return AttackMethod::mifgsm;
    if (s == "pgd") return AttackMethod::pgd;
    throw ContractError("unknown attack method '" + s + "'");
}

Objective objective_from_string(const std::string& s) {
    if (s == "total_loss" || s == "total") return Objective::total_loss;
    if (s == "sub_loss" || s == "sub") return Objective::sub_loss;
    if (s == "plan_loss" || s == "plan") return Objective::plan_loss;
    throw ContractError("unknown attack objective '" + s + "'");
}

void AttackConfig::validate() const {
    for (const auto& [id, eps] : budgets)
        if (eps < 0.0) throw ContractError(std::string("attack: negative budget at site ") + to_string(id));
    if (steps < 0) throw ContractError("attack: steps must be >= 0");
    if (method == AttackMethod::fgsm && steps != 1)
        throw ContractError("attack: fgsm is single-step (steps must be 1)");
    if (restarts < 1) throw ContractError("attack: restarts must be >= 1");
    if (!(step_fraction > 0.0 && step_fraction <= 2.0))
        throw ContractError("attack: step size must satisfy step <= 2*eps");
    if (step_size && !(*step_size > 0.0)) throw ContractError("attack: step_size must be positive");
    if (momentum < 0.0) throw ContractError("attack: momentum must be >= 0");
}

double AttackConfig::step_for(double eps) const {
    if (method == AttackMethod::fgsm) return eps;
    if (step_size) {
        if (*step_size > 2.0 * eps + 1e-12)
            throw ContractError("attack: step_size exceeds 2*eps for a configured site");
        return *step_size;
    }
    return eps * step_fraction;
}

// ---------------------------------------------------------------------------
// projections

double lp_norm(std::span<const double> v, Norm p) {
    double acc = 0.0;
    switch (p) {
        case Norm::l1:
            for (double x : v) acc += std::abs(x);
            return acc;
        case Norm::l2:
            for (double x : v) acc += x * x;
            return std::sqrt(acc);
        case Norm::linf:
            for (double x : v) acc = std::max(acc, std::abs(x));
            return acc;
    }
    return acc;
}

namespace {

void project_span(std::span<double> d, Norm p, double eps) {
    switch (p) {
        case Norm::linf:
            for (double& x : d) x = std::clamp(x, -eps, eps);
            return;
        case Norm::l2: {
            const double n = lp_norm(d, Norm::l2);
            if (n > eps) {
                const double s = eps / n;
                for (double& x : d) x *= s;
            }
            return;
        }
        case Norm::l1: {
            if (lp_norm(d, Norm::l1) <= eps) return;
            // Duchi et al. sort-and-threshold projection of |d| onto the
            // simplex of radius eps, signs restored afterwards.
            std::vector<double> u(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) u[i] = std::abs(d[i]);
            std::sort(u.begin(), u.end(), std::greater<double>());
            double css = 0.0, theta = 0.0;
            for (std::size_t j = 0; j < u.size(); ++j) {
                css += u[j];
                const double t = (css - eps) / static_cast<double>(j + 1);
                if (u[j] - t > 0.0) theta = t;
            }
            for (double& x : d) {
                const double mag = std::max(std::abs(x) - theta, 0.0);
                x = x > 0.0 ? mag : (x < 0.0 ? -mag : 0.0);
            }
            return;
        }
    }
}

}  // namespace

Tensor project(const Tensor& delta, Norm p, double eps) {
    if (!(eps > 0.0)) throw ContractError("project: eps must be positive");
    Tensor out = delta.detached();
    project_span(out.data(), p, eps);
    return out;
}

void project_rows_inplace(Tensor& delta, int rows, Norm p, double eps) {
    const int per = delta.size() / rows;
    for (int r = 0; r < rows; ++r)
        project_span(delta.data().subspan(static_cast<std::size_t>(r) * per, static_cast<std::size_t>(per)),
                     p, eps);
}

// ---------------------------------------------------------------------------
// engine

namespace {

constexpr double kGradTiny = 1e-12;

struct SiteState {
    SiteId id{};
    double eps = 0.0;
    double step = 0.0;
    int per_sample = 0;  // coordinates per sample
    Tensor delta;
    Tensor momentum;
};

void copy_row(Tensor& dst, const Tensor& src, int row, int per) {
    std::memcpy(dst.data().data() + static_cast<std::size_t>(row) * per,
                src.data().data() + static_cast<std::size_t>(row) * per,
                sizeof(double) * static_cast<std::size_t>(per));
}

}  // namespace

PerturbationSet attack_engine(AttackProblem& problem, const AttackConfig& cfg, Rng& rng) {
    cfg.validate();
    const int B = problem.batch();
    const bool is_pgd = cfg.method == AttackMethod::pgd;

    std::vector<SiteState> sites;
    for (SiteId id : problem.site_ids()) {
        auto it = cfg.budgets.find(id);
        if (it == cfg.budgets.end()) continue;
        SiteState st;
        st.id = id;
        st.eps = it->second;
        st.step = st.eps > 0.0 ? cfg.step_for(st.eps) : 0.0;
        st.delta = Tensor::zeros(problem.delta_shape(id));
        st.per_sample = st.delta.size() / B;
        sites.push_back(std::move(st));
    }

    PerturbationSet result;
    result.norm = cfg.norm;
    for (const auto& st : sites) result.budgets[st.id] = st.eps;
    std::map<SiteId, Tensor> best;
    for (const auto& st : sites) best[st.id] = Tensor::zeros(st.delta.shape());
    std::vector<double> best_obj(static_cast<std::size_t>(B),
                                 -std::numeric_limits<double>::infinity());

    auto assemble = [&](const std::vector<SiteState>& ss) {
        std::map<SiteId, Tensor> m;
        for (const auto& st : ss) m[st.id] = st.delta.detached();
        return m;
    };
    auto update_best = [&](const std::vector<double>& obj, const std::vector<SiteState>& ss) {
        for (int b = 0; b < B; ++b) {
            if (!(obj[static_cast<std::size_t>(b)] > best_obj[static_cast<std::size_t>(b)])) continue;
            best_obj[static_cast<std::size_t>(b)] = obj[static_cast<std::size_t>(b)];
            for (const auto& st : ss) copy_row(best[st.id], st.delta, b, st.per_sample);
        }
    };

    const int restarts = is_pgd ? cfg.restarts : 1;
    for (int r = 0; r < restarts; ++r) {
        for (auto& st : sites) {
            if (is_pgd && st.eps > 0.0) {
                st.delta = random_tensor(rng, st.delta.shape(), Dist::uniform, -st.eps, st.eps);
                project_rows_inplace(st.delta, B, cfg.norm, st.eps);
            } else {
                st.delta = Tensor::zeros(st.delta.shape());
            }
            if (cfg.method == AttackMethod::mifgsm) st.momentum = Tensor::zeros(st.delta.shape());
        }

        for (int t = 0; t < cfg.steps; ++t) {
            std::vector<double> obj;
            std::map<SiteId, Tensor> grads;
            problem.eval(assemble(sites), &obj, &grads);
            if (is_pgd) update_best(obj, sites);

            bool any_nonzero_grad = false;
            for (auto& st : sites) {
                if (st.eps <= 0.0) continue;
                Tensor& g = grads.at(st.id);
                auto gd = g.data();
                auto dd = st.delta.data();
                for (int b = 0; b < B; ++b) {
                    const std::size_t off = static_cast<std::size_t>(b) * st.per_sample;
                    std::span<double> grow = gd.subspan(off, static_cast<std::size_t>(st.per_sample));
                    std::span<double> drow = dd.subspan(off, static_cast<std::size_t>(st.per_sample));
                    for (double v : grow)
                        if (v != 0.0) { any_nonzero_grad = true; break; }
                    switch (cfg.method) {
                        case AttackMethod::fgsm:
                        case AttackMethod::pgd: {
                            if (cfg.norm == Norm::linf || cfg.method == AttackMethod::fgsm) {
                                for (std::size_t i = 0; i < drow.size(); ++i) {
                                    const double s = grow[i] > 0.0 ? 1.0 : (grow[i] < 0.0 ? -1.0 : 0.0);
                                    drow[i] += st.step * s;
                                }
                            } else {
                                const double n = lp_norm(grow, cfg.norm);
                                if (n < kGradTiny) {
                                    result.zero_grad_warning = true;
                                    break;
                                }
                                for (std::size_t i = 0; i < drow.size(); ++i)
                                    drow[i] += st.step * grow[i] / n;
                            }
                            break;
                        }
                        case AttackMethod::mifgsm: {
                            auto mrow = st.momentum.data().subspan(off, static_cast<std::size_t>(st.per_sample));
                            const double n1 = lp_norm(grow, Norm::l1);
                            if (n1 < kGradTiny) {
                                // degenerate gradient: accumulate it raw
                                result.zero_grad_warning = true;
                                for (std::size_t i = 0; i < mrow.size(); ++i)
                                    mrow[i] = cfg.momentum * mrow[i] + grow[i];
                            } else {
                                for (std::size_t i = 0; i < mrow.size(); ++i)
                                    mrow[i] = cfg.momentum * mrow[i] + grow[i] / n1;
                            }
                            for (std::size_t i = 0; i < drow.size(); ++i) {
                                const double s = mrow[i] > 0.0 ? 1.0 : (mrow[i] < 0.0 ? -1.0 : 0.0);
                                drow[i] += st.step * s;
                            }
                            break;
                        }
                    }
                }
                if (st.eps > 0.0) project_rows_inplace(st.delta, B, cfg.norm, st.eps);
            }
            if (!any_nonzero_grad) result.zero_grad_warning = true;
        }

        std::vector<double> obj;
        problem.eval(assemble(sites), &obj, nullptr);
        if (is_pgd) {
            update_best(obj, sites);
        } else {
            best_obj = obj;
            for (const auto& st : sites) best[st.id] = st.delta.detached();
        }
    }

    for (auto& [id, d] : best) result.deltas[id] = std::move(d);
    return result;
}

// ---------------------------------------------------------------------------
// pipeline problems

namespace {

class PipelineProblem : public AttackProblem {
public:
    PipelineProblem(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                    Objective objective, Norm norm)
        : model_(model), obs_(obs), targets_(targets), objective_(objective), norm_(norm) {}

    std::vector<SiteId> site_ids() const override {
        std::vector<SiteId> out;
        for (const auto& s : model_.sites) out.push_back(s.id);
        return out;
    }

    std::vector<int> delta_shape(SiteId id) const override {
        std::vector<int> shape{batch()};
        const auto& site = model_.site(id);
        shape.insert(shape.end(), site.shape.begin(), site.shape.end());
        return shape;
    }

    int batch() const override { return obs_.shape()[0]; }

    void eval(const std::map<SiteId, Tensor>& deltas, std::vector<double>* obj,
              std::map<SiteId, Tensor>* grads) override {
        Tape tape;
        PerturbationSet pset;
        pset.norm = norm_;
        pset.deltas = deltas;
        if (grads)
            for (auto& [id, d] : pset.deltas) tape.watch(d);

        ForwardResult fr;
        {
            Tape::Scope scope(tape);
            fr = model_.forward_with_noise(obs_, &targets_, &pset);
        }
        if (obj) {
            obj->resize(static_cast<std::size_t>(batch()));
            for (int b = 0; b < batch(); ++b)
                (*obj)[static_cast<std::size_t>(b)] = objective_ == Objective::plan_loss
                                                          ? fr.losses.per_sample_plan(b)
                                                          : fr.losses.per_sample_total(b);
        }
        if (!grads) return;

        auto module_loss = [&](ModuleId m) -> const Tensor& {
            return fr.losses.per_module[static_cast<std::size_t>(m)];
        };
        switch (objective_) {
            case Objective::total_loss: {
                Gradients g = backward(fr.losses.total, tape);
                for (const auto& [id, d] : pset.deltas) (*grads)[id] = g.grad(d);
                break;
            }
            case Objective::plan_loss: {
                Gradients g = backward(module_loss(ModuleId::Plan), tape);
                for (const auto& [id, d] : pset.deltas) (*grads)[id] = g.grad(d);
                break;
            }
            case Objective::sub_loss: {
                // Each site differentiates only its consumer's loss. A loss
                // that no watched delta reaches is a tape constant; sites
                // tied to it get zero gradients.
                auto maybe_backward = [&](ModuleId m) -> std::optional<Gradients> {
                    const Tensor& loss = module_loss(m);
                    if (loss.node() < 0 || loss.tape_id() != tape.id()) return std::nullopt;
                    return backward(loss, tape);
                };
                const auto g_track = maybe_backward(ModuleId::Track);
                const auto g_motion = maybe_backward(ModuleId::Motion);
                const auto g_occ = maybe_backward(ModuleId::Occ);
                const auto g_plan = maybe_backward(ModuleId::Plan);
                auto grad_of = [&](const std::optional<Gradients>& g, const Tensor& d) {
                    return g ? g->grad(d) : Tensor::zeros(d.shape());
                };
                for (const auto& [id, d] : pset.deltas) {
                    switch (id) {
                        case SiteId::Images: (*grads)[id] = grad_of(g_track, d); break;
                        case SiteId::TrackMotion:
                        case SiteId::MapMotion: (*grads)[id] = grad_of(g_motion, d); break;
                        case SiteId::MotionOcc: (*grads)[id] = grad_of(g_occ, d); break;
                        case SiteId::MotionPlan: (*grads)[id] = grad_of(g_plan, d); break;
                    }
                }
                break;
            }
        }
    }

private:
    const Pipeline& model_;
    const Tensor& obs_;
    const TargetBatch& targets_;
    Objective objective_;
    Norm norm_;
};

}  // namespace

std::map<SiteId, double> default_budgets(const Pipeline& model) {
    std::map<SiteId, double> out;
    for (const auto& s : model.sites) out[s.id] = s.default_budget;
    return out;
}

PerturbationSet run_attack(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                           const AttackConfig& cfg, Rng& rng) {
    PipelineProblem problem(model, obs, targets, cfg.objective, cfg.norm);
    return attack_engine(problem, cfg, rng);
}

PerturbationSet fgsm(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                     const AttackConfig& cfg, Rng& rng) {
    AttackConfig c = cfg;
    c.method = AttackMethod::fgsm;
    c.steps = 1;
    return run_attack(model, obs, targets, c, rng);
}

PerturbationSet mifgsm(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                       const AttackConfig& cfg, Rng& rng) {
    AttackConfig c = cfg;
    c.method = AttackMethod::mifgsm;
    return run_attack(model, obs, targets, c, rng);
}

PerturbationSet pgd(const Pipeline& model, const Tensor& obs, const TargetBatch& targets,
                    const AttackConfig& cfg, Rng& rng) {
    AttackConfig c = cfg;
    c.method = AttackMethod::pgd;
    return run_attack(model, obs, targets, c, rng);
}

PerturbationSet module_wise_attack(const Pipeline& model, const Tensor& obs,
                                   const TargetBatch& targets, AttackConfig cfg, Rng& rng) {
    if (cfg.budgets.empty()) cfg.budgets = default_budgets(model);
    cfg.objective = Objective::total_loss;
    return run_attack(model, obs, targets, cfg, rng);
}

PerturbationSet sub_loss_attack(const Pipeline& model, const Tensor& obs,
                                const TargetBatch& targets, AttackConfig cfg, Rng& rng) {
    if (cfg.budgets.empty()) cfg.budgets = default_budgets(model);
    cfg.objective = Objective::sub_loss;
    return run_attack(model, obs, targets, cfg, rng);
}

PerturbationSet plan_targeted_attack(const Pipeline& model, const Tensor& obs,
                                     const TargetBatch& targets, AttackConfig cfg, Rng& rng) {
    if (cfg.budgets.empty()) cfg.budgets = default_budgets(model);
    cfg.objective = Objective::plan_loss;
    return run_attack(model, obs, targets, cfg, rng);
}

LossBreakdown transfer_attack(const Pipeline& surrogate, const Pipeline& victim, const Tensor& obs,
                              const TargetBatch& targets, const AttackConfig& cfg, Rng& rng,
                              PerturbationSet* out_delta) {
    for (const auto& [id, eps] : cfg.budgets)
        if (id != SiteId::Images)
            throw ContractError("transfer_attack: only the Images site may carry a budget");
    if (cfg.budgets.empty()) throw ContractError("transfer_attack: an Images budget is required");
    PerturbationSet delta = run_attack(surrogate, obs, targets, cfg, rng);
    ForwardResult fr = victim.forward_with_noise(obs, &targets, &delta);
    if (out_delta) *out_delta = std::move(delta);
    return fr.losses;
}

Tensor universal_noise(const Pipeline& model, const Dataset& data, const AttackConfig& cfg,
                       int epochs, int batch_size, Rng& rng) {
    if (data.size() == 0) throw ContractError("universal_noise: dataset is empty");
    auto it = cfg.budgets.find(SiteId::Images);
    const double eps = it == cfg.budgets.end() ? 0.2 : it->second;
    if (!(eps > 0.0)) throw ContractError("universal_noise: Images budget must be positive");
    const double step = cfg.step_for(eps);

    const auto& site = model.site(SiteId::Images);
    Tensor delta = Tensor::zeros(site.shape);
    for (int e = 0; e < epochs; ++e) {
        std::vector<int> order = rng.permutation(data.size());
        for (int start = 0; start < data.size(); start += batch_size) {
            const int n = std::min(batch_size, data.size() - start);
            std::vector<Observation> obs;
            std::vector<Labels> labels;
            for (int i = 0; i < n; ++i) {
                const int idx = order[static_cast<std::size_t>(start + i)];
                obs.push_back(data.observations[static_cast<std::size_t>(idx)]);
                labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
            }
            Tensor batch = make_observation_batch(obs);
            TargetBatch targets = make_target_batch(labels);

            Tape tape;
            PerturbationSet pset;
            pset.norm = Norm::linf;
            pset.deltas[SiteId::Images] = delta;
            tape.watch(pset.deltas[SiteId::Images]);
            Tensor loss;
            {
                Tape::Scope scope(tape);
                ForwardResult fr = model.forward_with_noise(batch, &targets, &pset);
                loss = fr.losses.total;
            }
            Tensor g = backward(loss, tape).grad(pset.deltas[SiteId::Images]);
            auto dd = delta.data();
            for (int i = 0; i < delta.size(); ++i) {
                const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                dd[static_cast<std::size_t>(i)] =
                    std::clamp(dd[static_cast<std::size_t>(i)] + step * s, -eps, eps);
            }
        }
    }
    return delta;
}

// ---------------------------------------------------------------------------
// perturbation serialization: "MWPS" | u32 version | norm | sites

namespace {

constexpr std::uint32_t kPerturbationMagic = 0x5350574d;  // "MWPS"
constexpr std::uint32_t kPerturbationVersion = 1;

}  // namespace

void save_perturbation(const std::filesystem::path& path, const PerturbationSet& set) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kPerturbationMagic);
    put_u32(kPerturbationVersion);
    put_u32(static_cast<std::uint32_t>(set.norm));
    put_u32(static_cast<std::uint32_t>(set.deltas.size()));
    for (const auto& [id, d] : set.deltas) {
        put_u32(static_cast<std::uint32_t>(id));
        auto bit = set.budgets.find(id);
        put_f64(bit == set.budgets.end() ? 0.0 : bit->second);
        put_u32(static_cast<std::uint32_t>(d.ndim()));
        for (int s : d.shape()) put_u32(static_cast<std::uint32_t>(s));
        os.write(reinterpret_cast<const char*>(d.data().data()),
                 static_cast<std::streamsize>(d.size() * static_cast<int>(sizeof(double))));
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

PerturbationSet load_perturbation(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    auto get_u32 = [&]() {
        std::uint32_t v;
        is.read(reinterpret_cast<char*>(&v), 4);
        if (!is) throw IoError("unexpected end of file");
        return v;
    };
    auto get_f64 = [&]() {
        double v;
        is.read(reinterpret_cast<char*>(&v), 8);
        if (!is) throw IoError("unexpected end of file");
        return v;
    };
    if (get_u32() != kPerturbationMagic) throw IoError("not a perturbation file: " + path.string());
    if (get_u32() != kPerturbationVersion) throw IoError("unsupported perturbation version");
    PerturbationSet set;
    set.norm = static_cast<Norm>(get_u32());
    const auto n = get_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto id = static_cast<SiteId>(get_u32());
        const double eps = get_f64();
        const auto ndim = get_u32();
        std::vector<int> shape(ndim);
        for (auto& s : shape) s = static_cast<int>(get_u32());
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw IoError("unexpected end of file");
        set.budgets[id] = eps;
        set.deltas[id] = Tensor(shape, std::move(data));
    }
    return set;
}

}  // namespace mwat
