#include "mwat/driving.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mwat/optim.hpp"
#include "mwat/rng.hpp"

namespace mwat {

namespace {

int clamp_col(double x) {
    return std::clamp(static_cast<int>(std::lround(x)), 0, kGrid - 1);
}

}  // namespace

bool Scenario::inside_corridor(double x, double y) const {
    const int col = clamp_col(x);
    const double low = corridor_low[static_cast<std::size_t>(col)];
    return y >= low && y <= low + kCorridorWidth - 1;
}

double Scenario::centerline(double x) const {
    const int col = clamp_col(x);
    return corridor_low[static_cast<std::size_t>(col)] + (kCorridorWidth - 1) / 2.0;
}

void DatasetConfig::validate() const {
    if (n_scenarios <= 0) throw ContractError("dataset: n_scenarios must be positive");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw ContractError("dataset: split_fraction must be in (0,1)");
    double total = 0.0;
    for (double p : obstacle_count_probs) {
        if (p < 0.0) throw ContractError("dataset: obstacle_count_probs must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("dataset: obstacle_count_probs must sum to 1");
    if (!(ego_speed_min > 0.0 && ego_speed_min <= ego_speed_max))
        throw ContractError("dataset: ego speed range invalid");
    if (!(obs_speed_min <= obs_speed_max)) throw ContractError("dataset: obstacle speed range invalid");
}

Scenario generate_scenario(std::uint64_t seed, const DatasetConfig& cfg) {
    Rng rng(seed, Stream::data);
    Scenario s;

    const int y0 = 4 + static_cast<int>(rng.next_u64() % 17);  // band start in [4,20]
    const bool bend = rng.next_double() < 0.5;
    int delta = 0, x_bend = kGrid;
    if (bend) {
        x_bend = 10 + static_cast<int>(rng.next_u64() % 13);  // [10,22]
        delta = 1 + static_cast<int>(rng.next_u64() % 4);     // magnitude 1..4
        if (rng.next_double() < 0.5) delta = -delta;
    }
    for (int x = 0; x < kGrid; ++x) {
        double shift = 0.0;
        if (bend && x > x_bend) shift = std::min(1.0, (x - x_bend) / 8.0) * delta;
        s.corridor_low[static_cast<std::size_t>(x)] =
            std::clamp(y0 + static_cast<int>(std::lround(shift)), 0, kGrid - kCorridorWidth);
    }

    s.ego_x = rng.uniform(2.0, 6.0);
    const double low0 = s.corridor_low[static_cast<std::size_t>(clamp_col(s.ego_x))];
    s.ego_y = rng.uniform(low0 + 2.0, low0 + 5.0);
    s.ego_v = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);

    const double u = rng.next_double();
    int n_obst = kMaxObstacles;
    double acc = 0.0;
    for (int k = 0; k <= kMaxObstacles; ++k) {
        acc += cfg.obstacle_count_probs[static_cast<std::size_t>(k)];
        if (u < acc) { n_obst = k; break; }
    }
    for (int k = 0; k < n_obst; ++k) {
        Scenario::Obstacle o;
        o.x = std::min(s.ego_x + rng.uniform(5.0, 22.0), static_cast<double>(kGrid - 2));
        const double low = s.corridor_low[static_cast<std::size_t>(clamp_col(o.x))];
        o.y = rng.uniform(low + 1.0, low + kCorridorWidth - 2.0);
        o.vx = rng.uniform(cfg.obs_speed_min, cfg.obs_speed_max);
        o.vy = rng.uniform(cfg.obs_speed_min, cfg.obs_speed_max);
        s.obstacles.push_back(o);
    }
    return s;
}

Observation rasterize(const Scenario& s) {
    std::vector<double> data(static_cast<std::size_t>(4) * kGrid * kGrid, 0.0);
    auto paint = [&](int channel, double x, double y) {
        const int cx = clamp_col(x);
        const int cy = clamp_col(y);
        data[(static_cast<std::size_t>(channel) * kGrid + static_cast<std::size_t>(cy)) * kGrid +
             static_cast<std::size_t>(cx)] = 1.0;
    };
    for (int x = 0; x < kGrid; ++x) {
        const int low = s.corridor_low[static_cast<std::size_t>(x)];
        for (int y = low; y < low + kCorridorWidth; ++y)
            data[(0 * kGrid + static_cast<std::size_t>(y)) * kGrid + static_cast<std::size_t>(x)] = 1.0;
    }
    paint(1, s.ego_x, s.ego_y);
    for (const auto& o : s.obstacles) {
        paint(2, o.x, o.y);
        paint(3, o.x - o.vx, o.y - o.vy);  // positions rolled back one step
    }
    return Observation{Tensor({4, kGrid, kGrid}, std::move(data))};
}

std::array<double, 2 * kHorizon> expert_plan(const Scenario& s) {
    std::array<double, 2 * kHorizon> wp{};
    for (int step = 1; step <= kHorizon; ++step) {
        const double x = s.ego_x + step * s.ego_v;
        const double c = s.centerline(x);
        bool found = false;
        double best_cost = 0.0, best_y = 0.0;
        // Scan order 0,-1,+1,-2,+2,... so keeping the first strict improvement
        // realizes the tie-breaking rule (smaller |o|, then negative o).
        for (int a = 0; a <= 6; ++a) {
            for (int sgn : {-1, +1}) {
                if (a == 0 && sgn == +1) continue;
                const int o = sgn * a;
                const double y = c + o;
                if (!s.inside_corridor(x, y)) continue;
                double cost = static_cast<double>(o) * o;
                for (const auto& ob : s.obstacles) {
                    const double ox = ob.x + step * ob.vx;
                    const double oy = ob.y + step * ob.vy;
                    const double d2 = (ox - x) * (ox - x) + (oy - y) * (oy - y);
                    if (d2 <= 4.0) { cost += 1000.0; break; }
                }
                if (!found || cost < best_cost) {
                    found = true;
                    best_cost = cost;
                    best_y = y;
                }
            }
        }
        if (!found) throw InfeasibleScenarioError();
        wp[static_cast<std::size_t>(2 * (step - 1))] = x;
        wp[static_cast<std::size_t>(2 * (step - 1) + 1)] = best_y;
    }
    return wp;
}

Labels make_labels(const Scenario& s) {
    Labels lb;
    lb.n_obstacles = static_cast<int>(s.obstacles.size());
    lb.obstacle_positions.fill(kSentinel);
    lb.future_displacements.fill(kSentinel);
    lb.future_occupancy.fill(0.0);

    for (int k = 0; k < lb.n_obstacles; ++k) {
        const auto& o = s.obstacles[static_cast<std::size_t>(k)];
        lb.obstacle_positions[static_cast<std::size_t>(2 * k)] = o.x;
        lb.obstacle_positions[static_cast<std::size_t>(2 * k + 1)] = o.y;
        for (int step = 1; step <= kHorizon; ++step) {
            const std::size_t base = static_cast<std::size_t>((k * kHorizon + step - 1) * 2);
            lb.future_displacements[base] = step * o.vx;
            lb.future_displacements[base + 1] = step * o.vy;
            const int gx = clamp_col(o.x + step * o.vx) / 4;
            const int gy = clamp_col(o.y + step * o.vy) / 4;
            lb.future_occupancy[static_cast<std::size_t>(((step - 1) * 8 + gy) * 8 + gx)] = 1.0;
        }
    }
    // 16x16 drivable mask: a coarse cell is drivable when any of its 2x2
    // fine cells lies in the corridor.
    for (int cy = 0; cy < 16; ++cy)
        for (int cx = 0; cx < 16; ++cx) {
            double v = 0.0;
            for (int dy = 0; dy < 2 && v == 0.0; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    if (s.inside_corridor(2 * cx + dx, 2 * cy + dy)) { v = 1.0; break; }
            lb.drivable_mask_16[static_cast<std::size_t>(cy * 16 + cx)] = v;
        }
    lb.expert_waypoints = expert_plan(s);
    return lb;
}

std::pair<Dataset, Dataset> build_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    Dataset train, val;
    train.cfg = val.cfg = cfg;
    train.split = "train";
    val.split = "val";
    const int n_train = static_cast<int>(cfg.n_scenarios * cfg.split_fraction);
    for (int i = 0; i < cfg.n_scenarios; ++i) {
        Scenario s;
        Labels lb;
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            s = generate_scenario(Rng::derive(cfg.seed, static_cast<std::uint64_t>(i) * 131 + attempt), cfg);
            try {
                lb = make_labels(s);
                ok = true;
            } catch (const InfeasibleScenarioError&) {
            }
        }
        if (!ok) throw ContractError("dataset: could not build a feasible scenario");
        Dataset& dst = (i < n_train) ? train : val;
        dst.scenarios.push_back(s);
        dst.labels.push_back(lb);
        dst.observations.push_back(rasterize(s));
    }
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// serialization: "MWDS" | u32 version | split | cfg | records

namespace {

constexpr std::uint32_t kDatasetMagic = 0x5344574d;  // "MWDS"
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const auto n = get<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("unexpected end of file");
    return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    put(os, kDatasetMagic);
    put(os, kDatasetVersion);
    put_string(os, ds.split);
    put(os, ds.cfg.seed);
    put(os, ds.cfg.n_scenarios);
    for (double p : ds.cfg.obstacle_count_probs) put(os, p);
    put(os, ds.cfg.ego_speed_min);
    put(os, ds.cfg.ego_speed_max);
    put(os, ds.cfg.obs_speed_min);
    put(os, ds.cfg.obs_speed_max);
    put(os, ds.cfg.split_fraction);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.scenarios.size()));
    for (std::size_t i = 0; i < ds.scenarios.size(); ++i) {
        const Scenario& s = ds.scenarios[i];
        for (int v : s.corridor_low) put<std::int32_t>(os, v);
        put(os, s.ego_x);
        put(os, s.ego_y);
        put(os, s.ego_v);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(s.obstacles.size()));
        for (const auto& o : s.obstacles) {
            put(os, o.x);
            put(os, o.y);
            put(os, o.vx);
            put(os, o.vy);
        }
        const Labels& lb = ds.labels[i];
        for (double v : lb.obstacle_positions) put(os, v);
        for (double v : lb.drivable_mask_16) put(os, v);
        for (double v : lb.future_displacements) put(os, v);
        for (double v : lb.future_occupancy) put(os, v);
        for (double v : lb.expert_waypoints) put(os, v);
        put<std::int32_t>(os, lb.n_obstacles);
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    if (get<std::uint32_t>(is) != kDatasetMagic) throw IoError("not a dataset file: " + path.string());
    if (get<std::uint32_t>(is) != kDatasetVersion) throw IoError("unsupported dataset version");
    Dataset ds;
    ds.split = get_string(is);
    ds.cfg.seed = get<std::uint64_t>(is);
    ds.cfg.n_scenarios = get<int>(is);
    for (auto& p : ds.cfg.obstacle_count_probs) p = get<double>(is);
    ds.cfg.ego_speed_min = get<double>(is);
    ds.cfg.ego_speed_max = get<double>(is);
    ds.cfg.obs_speed_min = get<double>(is);
    ds.cfg.obs_speed_max = get<double>(is);
    ds.cfg.split_fraction = get<double>(is);
    const auto n = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        Scenario s;
        for (auto& v : s.corridor_low) v = get<std::int32_t>(is);
        s.ego_x = get<double>(is);
        s.ego_y = get<double>(is);
        s.ego_v = get<double>(is);
        const auto k = get<std::uint32_t>(is);
        for (std::uint32_t j = 0; j < k; ++j) {
            Scenario::Obstacle o;
            o.x = get<double>(is);
            o.y = get<double>(is);
            o.vx = get<double>(is);
            o.vy = get<double>(is);
            s.obstacles.push_back(o);
        }
        Labels lb;
        for (auto& v : lb.obstacle_positions) v = get<double>(is);
        for (auto& v : lb.drivable_mask_16) v = get<double>(is);
        for (auto& v : lb.future_displacements) v = get<double>(is);
        for (auto& v : lb.future_occupancy) v = get<double>(is);
        for (auto& v : lb.expert_waypoints) v = get<double>(is);
        lb.n_obstacles = get<std::int32_t>(is);
        ds.scenarios.push_back(s);
        ds.labels.push_back(lb);
        ds.observations.push_back(rasterize(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// reference model

namespace {

Tensor init_tensor(Rng& rng, const std::vector<int>& shape, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return random_tensor(rng, shape, Dist::uniform, -bound, bound);
}

// conv(3x3, stride 2, pad 1) x2 -> flatten -> linear -> tanh, feature dim 64
std::pair<Tensor, Tensor> encoder_forward(const ModuleNode& self, const Tensor& x) {
    const Tensor& c1w = self.params[0].value;
    const Tensor& c1b = self.params[1].value;
    const Tensor& c2w = self.params[2].value;
    const Tensor& c2b = self.params[3].value;
    const Tensor& lw = self.params[4].value;
    const Tensor& lb = self.params[5].value;
    const Tensor& hw = self.params[6].value;
    const Tensor& hb = self.params[7].value;
    Tensor h = relu(conv2d(x, c1w, c1b, 2, 1));
    h = relu(conv2d(h, c2w, c2b, 2, 1));
    h = flatten(h);
    Tensor f = tanh(add(matmul(h, lw), lb));
    Tensor head = add(matmul(f, hw), hb);
    return {f, head};
}

// linear -> relu -> linear -> tanh feature, plus a linear head off the feature
std::pair<Tensor, Tensor> mlp_forward(const ModuleNode& self, const Tensor& x, bool tanh_feature) {
    const Tensor& w1 = self.params[0].value;
    const Tensor& b1 = self.params[1].value;
    const Tensor& w2 = self.params[2].value;
    const Tensor& b2 = self.params[3].value;
    Tensor h = relu(add(matmul(x, w1), b1));
    Tensor f = add(matmul(h, w2), b2);
    if (tanh_feature) f = tanh(f);
    if (self.params.size() == 4) return {f, f};  // head is the feature itself (Plan)
    const Tensor& hw = self.params[4].value;
    const Tensor& hb = self.params[5].value;
    Tensor head = add(matmul(f, hw), hb);
    return {f, head};
}

void add_param(ModuleNode& m, Rng& rng, const std::string& name, std::vector<int> shape, int fan_in) {
    m.params.push_back({name, init_tensor(rng, shape, fan_in)});
}

void add_encoder_params(ModuleNode& m, Rng& rng, int head_dim) {
    add_param(m, rng, "conv1.w", {8, 4, 3, 3}, 4 * 9);
    add_param(m, rng, "conv1.b", {8}, 4 * 9);
    add_param(m, rng, "conv2.w", {16, 8, 3, 3}, 8 * 9);
    add_param(m, rng, "conv2.b", {16}, 8 * 9);
    add_param(m, rng, "lin.w", {1024, 64}, 1024);
    add_param(m, rng, "lin.b", {64}, 1024);
    add_param(m, rng, "head.w", {64, head_dim}, 64);
    add_param(m, rng, "head.b", {head_dim}, 64);
}

Tensor masked_scaled_mse(const Tensor& head, const TargetBatch& t, const std::string& target_key,
                         const std::string& mask_key) {
    return mse_loss(head, t.at(target_key), t.at(mask_key));
}

}  // namespace

Pipeline build_reference_model(std::uint64_t seed) {
    Rng rng(seed, Stream::init);
    Pipeline p;
    p.arch_tag = kArchTag;

    ModuleNode& track = p.modules[0];
    track.id = ModuleId::Track;
    add_encoder_params(track, rng, 6);
    track.forward = [](const ModuleNode& self, const std::vector<Tensor>& in) {
        return encoder_forward(self, in[0]);
    };
    track.loss = [](const Tensor& head, const TargetBatch& t) {
        return masked_scaled_mse(head, t, "obstacle_positions_n", "obstacle_mask");
    };

    ModuleNode& map = p.modules[1];
    map.id = ModuleId::Map;
    add_encoder_params(map, rng, 256);
    map.forward = [](const ModuleNode& self, const std::vector<Tensor>& in) {
        return encoder_forward(self, in[0]);
    };
    map.loss = [](const Tensor& head, const TargetBatch& t) {
        return bce_with_logits_loss(head, t.at("drivable_mask_16"));
    };

    ModuleNode& motion = p.modules[2];
    motion.id = ModuleId::Motion;
    add_param(motion, rng, "lin1.w", {128, 128}, 128);
    add_param(motion, rng, "lin1.b", {128}, 128);
    add_param(motion, rng, "lin2.w", {128, 64}, 128);
    add_param(motion, rng, "lin2.b", {64}, 128);
    add_param(motion, rng, "head.w", {64, 18}, 64);
    add_param(motion, rng, "head.b", {18}, 64);
    motion.forward = [](const ModuleNode& self, const std::vector<Tensor>& in) {
        return mlp_forward(self, concat(in[0], in[1], 1), true);
    };
    motion.loss = [](const Tensor& head, const TargetBatch& t) {
        return masked_scaled_mse(head, t, "future_displacements_n", "displacement_mask");
    };

    ModuleNode& occ = p.modules[3];
    occ.id = ModuleId::Occ;
    add_param(occ, rng, "lin1.w", {64, 128}, 64);
    add_param(occ, rng, "lin1.b", {128}, 64);
    add_param(occ, rng, "lin2.w", {128, 64}, 128);
    add_param(occ, rng, "lin2.b", {64}, 128);
    add_param(occ, rng, "head.w", {64, 192}, 64);
    add_param(occ, rng, "head.b", {192}, 64);
    occ.forward = [](const ModuleNode& self, const std::vector<Tensor>& in) {
        return mlp_forward(self, in[0], true);
    };
    occ.loss = [](const Tensor& head, const TargetBatch& t) {
        return bce_with_logits_loss(head, t.at("future_occupancy"));
    };

    ModuleNode& plan = p.modules[4];
    plan.id = ModuleId::Plan;
    add_param(plan, rng, "lin1.w", {64, 64}, 64);
    add_param(plan, rng, "lin1.b", {64}, 64);
    add_param(plan, rng, "lin2.w", {64, 6}, 64);
    add_param(plan, rng, "lin2.b", {6}, 64);
    plan.forward = [](const ModuleNode& self, const std::vector<Tensor>& in) {
        return mlp_forward(self, in[0], false);
    };
    plan.loss = [](const Tensor& head, const TargetBatch& t) {
        return mse_loss(head, t.at("expert_waypoints_n"));
    };

    p.sites = {
        {SiteId::Images, {4, kGrid, kGrid}, 0.8, std::pair<double, double>{0.0, 1.0}},
        {SiteId::TrackMotion, {64}, 0.1, std::nullopt},
        {SiteId::MapMotion, {64}, 0.1, std::nullopt},
        {SiteId::MotionOcc, {64}, 0.1, std::nullopt},
        {SiteId::MotionPlan, {64}, 0.1, std::nullopt},
    };
    return p;
}

// ---------------------------------------------------------------------------
// batching and metrics

Tensor make_observation_batch(std::span<const Observation> obs) {
    if (obs.empty()) throw ContractError("empty observation batch");
    const int per = obs[0].raster.size();
    std::vector<double> data(static_cast<std::size_t>(per) * obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
        std::memcpy(data.data() + i * static_cast<std::size_t>(per), obs[i].raster.data().data(),
                    sizeof(double) * static_cast<std::size_t>(per));
    return Tensor({static_cast<int>(obs.size()), 4, kGrid, kGrid}, std::move(data));
}

TargetBatch make_target_batch(std::span<const Labels> labels) {
    if (labels.empty()) throw ContractError("empty label batch");
    const int B = static_cast<int>(labels.size());
    TargetBatch t;
    t.batch = B;

    auto fill = [&](const std::string& key, int width, auto&& per_sample) {
        std::vector<double> data(static_cast<std::size_t>(B) * width);
        for (int b = 0; b < B; ++b) per_sample(labels[static_cast<std::size_t>(b)],
                                               data.data() + static_cast<std::size_t>(b) * width);
        t.items.emplace(key, Tensor({B, width}, std::move(data)));
    };

    fill("obstacle_positions_n", 6, [](const Labels& lb, double* out) {
        for (int i = 0; i < 6; ++i)
            out[i] = (i / 2 < lb.n_obstacles) ? lb.obstacle_positions[static_cast<std::size_t>(i)] / kPosScale : 0.0;
    });
    fill("obstacle_mask", 6, [](const Labels& lb, double* out) {
        for (int i = 0; i < 6; ++i) out[i] = (i / 2 < lb.n_obstacles) ? 1.0 : 0.0;
    });
    fill("drivable_mask_16", 256, [](const Labels& lb, double* out) {
        std::copy(lb.drivable_mask_16.begin(), lb.drivable_mask_16.end(), out);
    });
    fill("future_displacements_n", 18, [](const Labels& lb, double* out) {
        for (int i = 0; i < 18; ++i)
            out[i] = (i / 6 < lb.n_obstacles) ? lb.future_displacements[static_cast<std::size_t>(i)] / kPosScale : 0.0;
    });
    fill("displacement_mask", 18, [](const Labels& lb, double* out) {
        for (int i = 0; i < 18; ++i) out[i] = (i / 6 < lb.n_obstacles) ? 1.0 : 0.0;
    });
    fill("future_occupancy", 192, [](const Labels& lb, double* out) {
        std::copy(lb.future_occupancy.begin(), lb.future_occupancy.end(), out);
    });
    fill("expert_waypoints_n", 6, [](const Labels& lb, double* out) {
        for (int i = 0; i < 6; ++i) out[i] = lb.expert_waypoints[static_cast<std::size_t>(i)] / kPosScale;
    });
    return t;
}

namespace {

template <std::size_t N>
std::array<double, N> decode_row(const Tensor& head, int b) {
    if (head.ndim() != 2 || head.shape()[1] != static_cast<int>(N))
        throw DimensionError("decode: head must be [B," + std::to_string(N) + "]");
    std::array<double, N> out;
    for (std::size_t i = 0; i < N; ++i)
        out[i] = head[b * static_cast<int>(N) + static_cast<int>(i)] * kPosScale;
    return out;
}

}  // namespace

std::array<double, 2 * kHorizon> decode_waypoints(const Tensor& plan_head, int b) {
    return decode_row<2 * kHorizon>(plan_head, b);
}

std::array<double, 2 * kMaxObstacles> decode_positions(const Tensor& track_head, int b) {
    return decode_row<2 * kMaxObstacles>(track_head, b);
}

std::array<double, kMaxObstacles * kHorizon * 2> decode_displacements(const Tensor& motion_head, int b) {
    return decode_row<kMaxObstacles * kHorizon * 2>(motion_head, b);
}

double metric_avg_l2(std::span<const double> pred, std::span<const double> expert) {
    if (pred.size() != expert.size() || pred.size() % 2 != 0)
        throw DimensionError("metric_avg_l2: waypoint arrays must have equal even length");
    const std::size_t steps = pred.size() / 2;
    double acc = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
        const double dx = pred[2 * s] - expert[2 * s];
        const double dy = pred[2 * s + 1] - expert[2 * s + 1];
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return acc / static_cast<double>(steps);
}

double metric_iou(std::span<const double> pred_logits, std::span<const double> true_mask,
                  double threshold) {
    if (pred_logits.size() != true_mask.size()) throw DimensionError("metric_iou: size mismatch");
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred_logits.size(); ++i) {
        // sigmoid(z) >= threshold  <=>  z >= logit(threshold)
        const double zt = std::log(threshold / (1.0 - threshold));
        const bool p = pred_logits[i] >= zt;
        const bool t = true_mask[i] >= 0.5;
        inter += (p && t);
        uni += (p || t);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

std::pair<double, bool> metric_min_ade(std::span<const double> pred, std::span<const double> truth,
                                       int n_obstacles) {
    if (pred.size() != truth.size()) throw DimensionError("metric_min_ade: size mismatch");
    if (n_obstacles <= 0) return {0.0, false};
    double acc = 0.0;
    int cnt = 0;
    for (int k = 0; k < n_obstacles; ++k)
        for (int s = 0; s < kHorizon; ++s) {
            const std::size_t i = static_cast<std::size_t>((k * kHorizon + s) * 2);
            const double dx = pred[i] - truth[i];
            const double dy = pred[i + 1] - truth[i + 1];
            acc += std::sqrt(dx * dx + dy * dy);
            ++cnt;
        }
    return {acc / cnt, true};
}

std::pair<double, bool> metric_det_err(std::span<const double> pred, std::span<const double> truth,
                                       int n_obstacles) {
    if (pred.size() != truth.size()) throw DimensionError("metric_det_err: size mismatch");
    if (n_obstacles <= 0) return {0.0, false};
    double acc = 0.0;
    for (int k = 0; k < n_obstacles; ++k) {
        const std::size_t i = static_cast<std::size_t>(2 * k);
        const double dx = pred[i] - truth[i];
        const double dy = pred[i + 1] - truth[i + 1];
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return {acc / n_obstacles, true};
}

}  // namespace mwat
