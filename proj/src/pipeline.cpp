#include "mwat/pipeline.hpp"

#include <algorithm>

namespace mwat {

const char* to_string(ModuleId id) {
    switch (id) {
        case ModuleId::Track: return "Track";
        case ModuleId::Map: return "Map";
        case ModuleId::Motion: return "Motion";
        case ModuleId::Occ: return "Occ";
        case ModuleId::Plan: return "Plan";
    }
    return "?";
}

ModuleId module_from_string(const std::string& s) {
    for (int i = 0; i < kNumModules; ++i)
        if (s == to_string(static_cast<ModuleId>(i))) return static_cast<ModuleId>(i);
    throw ContractError("unknown module id '" + s + "'");
}

const char* to_string(SiteId id) {
    switch (id) {
        case SiteId::Images: return "Images";
        case SiteId::TrackMotion: return "TrackMotion";
        case SiteId::MapMotion: return "MapMotion";
        case SiteId::MotionOcc: return "MotionOcc";
        case SiteId::MotionPlan: return "MotionPlan";
    }
    return "?";
}

SiteId site_from_string(const std::string& s) {
    for (int i = 0; i < kNumSites; ++i)
        if (s == to_string(static_cast<SiteId>(i))) return static_cast<SiteId>(i);
    throw ContractError("unknown site id '" + s + "'");
}

const char* to_string(Norm p) {
    switch (p) {
        case Norm::l1: return "l1";
        case Norm::l2: return "l2";
        case Norm::linf: return "linf";
    }
    return "?";
}

Norm norm_from_string(const std::string& s) {
    if (s == "l1") return Norm::l1;
    if (s == "l2") return Norm::l2;
    if (s == "linf") return Norm::linf;
    throw ContractError("unknown norm '" + s + "'");
}

const Tensor& TargetBatch::at(const std::string& key) const {
    auto it = items.find(key);
    if (it == items.end()) throw ContractError("target batch is missing '" + key + "'");
    return it->second;
}

double LossBreakdown::per_sample_total(int b) const {
    double acc = 0.0;
    for (const auto& v : per_sample) acc += v[static_cast<std::size_t>(b)];
    return acc;
}

double LossBreakdown::per_sample_plan(int b) const {
    return per_sample[static_cast<std::size_t>(ModuleId::Plan)][static_cast<std::size_t>(b)];
}

const InjectionSite& Pipeline::site(SiteId id) const {
    for (const auto& s : sites)
        if (s.id == id) return s;
    throw ContractError(std::string("pipeline has no site '") + to_string(id) + "'");
}

namespace {

bool all_zero(const Tensor& t) {
    for (int i = 0; i < t.size(); ++i)
        if (t[i] != 0.0) return false;
    return true;
}

// Adds the site's delta to the tensor flowing through it. A plain all-zero
// delta is skipped entirely so a zero-budget run takes the exact same
// numeric path as a clean one; a tape-live delta is always recorded so
// attacks can differentiate through the site even at delta = 0.
Tensor apply_site(const Tensor& x, const InjectionSite& site, const PerturbationSet* noise) {
    if (!noise) return x;
    auto it = noise->deltas.find(site.id);
    if (it == noise->deltas.end()) return x;
    const Tensor& delta = it->second;

    const bool batched = delta.shape() == x.shape();
    bool broadcast = false;
    if (!batched) {
        broadcast = delta.ndim() == x.ndim() - 1 &&
                    std::equal(x.shape().begin() + 1, x.shape().end(), delta.shape().begin());
        if (!broadcast)
            throw ContractError(std::string("delta shape ") + delta.shape_str() + " does not fit site " +
                                to_string(site.id) + " carrying " + x.shape_str());
    }
    if (!tape_live(delta) && all_zero(delta)) return x;
    Tensor y = add(x, delta);
    if (site.clamp_range) y = clamp(y, site.clamp_range->first, site.clamp_range->second);
    return y;
}

}  // namespace

ForwardResult Pipeline::forward_with_noise(const Tensor& obs, const TargetBatch* labels,
                                           const PerturbationSet* noise) const {
    if (obs.ndim() != 4) throw DimensionError("forward: observation batch must be [B,C,H,W]");
    ForwardResult out;

    const Tensor x = apply_site(obs, site(SiteId::Images), noise);

    const auto& track = modules[static_cast<std::size_t>(ModuleId::Track)];
    const auto& map = modules[static_cast<std::size_t>(ModuleId::Map)];
    const auto& motion = modules[static_cast<std::size_t>(ModuleId::Motion)];
    const auto& occ = modules[static_cast<std::size_t>(ModuleId::Occ)];
    const auto& plan = modules[static_cast<std::size_t>(ModuleId::Plan)];

    auto [f_track, h_track] = track.forward(track, {x});
    auto [f_map, h_map] = map.forward(map, {x});

    const Tensor f_track_in = apply_site(f_track, site(SiteId::TrackMotion), noise);
    const Tensor f_map_in = apply_site(f_map, site(SiteId::MapMotion), noise);
    auto [f_motion, h_motion] = motion.forward(motion, {f_track_in, f_map_in});

    const Tensor f_occ_in = apply_site(f_motion, site(SiteId::MotionOcc), noise);
    auto [f_occ, h_occ] = occ.forward(occ, {f_occ_in});

    const Tensor f_plan_in = apply_site(f_motion, site(SiteId::MotionPlan), noise);
    auto [f_plan, h_plan] = plan.forward(plan, {f_plan_in});

    out.feature = {f_track, f_map, f_motion, f_occ, f_plan};
    out.head = {h_track, h_map, h_motion, h_occ, h_plan};

    if (labels) {
        for (int j = 0; j < kNumModules; ++j) {
            const auto& node = modules[static_cast<std::size_t>(j)];
            Tensor per_sample = node.loss(out.head[static_cast<std::size_t>(j)], *labels);
            out.losses.per_sample[static_cast<std::size_t>(j)]
                .assign(per_sample.data().begin(), per_sample.data().end());
            out.losses.per_module[static_cast<std::size_t>(j)] = mean(per_sample);
        }
        out.losses.total = total_loss(out.losses, {1.0, 1.0, 1.0, 1.0, 1.0});
        out.has_losses = true;
    }
    return out;
}

void Pipeline::freeze_modules(std::span<const ModuleId> ids) {
    for (ModuleId id : ids) {
        const auto i = static_cast<std::size_t>(id);
        if (i >= modules.size()) throw ContractError("freeze_modules: bad module id");
        modules[i].frozen = true;
    }
}

void Pipeline::unfreeze_all() {
    for (auto& m : modules) m.frozen = false;
}

std::vector<std::pair<std::string, Tensor*>> Pipeline::parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& m : modules)
        for (auto& p : m.params) out.emplace_back(std::string(to_string(m.id)) + "." + p.name, &p.value);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Pipeline::parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& m : modules)
        for (const auto& p : m.params)
            out.emplace_back(std::string(to_string(m.id)) + "." + p.name, &p.value);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Pipeline::trainable_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& m : modules) {
        if (m.frozen) continue;
        for (auto& p : m.params) out.emplace_back(std::string(to_string(m.id)) + "." + p.name, &p.value);
    }
    return out;
}

int Pipeline::parameter_count() const {
    int n = 0;
    for (const auto& m : modules)
        for (const auto& p : m.params) n += p.value.size();
    return n;
}

std::uint64_t Pipeline::parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& m : modules)
        for (const auto& p : m.params) {
            h = fnv1a64(p.name.data(), p.name.size(), h);
            h = fnv1a64(p.value.data().data(), static_cast<std::size_t>(p.value.size()) * sizeof(double), h);
        }
    return h;
}

Tensor total_loss(const LossBreakdown& breakdown, const std::vector<double>& weights) {
    if (weights.size() != kNumModules)
        throw ContractError("total_loss: expected " + std::to_string(kNumModules) + " weights");
    for (double w : weights)
        if (!(w > 0.0)) throw ContractError("total_loss: weights must be positive");
    Tensor acc;
    for (int j = 0; j < kNumModules; ++j) {
        Tensor term = mul(Tensor::scalar(weights[static_cast<std::size_t>(j)]),
                          breakdown.per_module[static_cast<std::size_t>(j)]);
        acc = (j == 0) ? term : add(acc, term);
    }
    return acc;
}

}  // namespace mwat
