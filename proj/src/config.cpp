#include "mwat/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace mwat {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            const std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
}

// Raw parsed keys, section.key -> value string.
using KeyMap = std::map<std::string, std::string>;

KeyMap parse_ini(const std::string& text) {
    KeyMap out;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    const std::set<std::string> sections{"dataset", "model", "train", "attack",
                                         "dwaa",    "eval",  "sim"};
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto semi = line.find(';');
        if (semi != std::string::npos) line = line.substr(0, semi);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section))
                throw ConfigError("unknown section '[" + section + "]'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        const std::string full = section + "." + key;
        if (out.count(full)) throw ConfigError("duplicate key '" + full + "'");
        out[full] = value;
    }
    return out;
}

struct Reader {
    KeyMap keys;
    std::set<std::string> seen;

    std::optional<std::string> raw(const std::string& full) {
        auto it = keys.find(full);
        if (it == keys.end()) return std::nullopt;
        seen.insert(full);
        return it->second;
    }

    double real(const std::string& full, double dflt) {
        auto v = raw(full);
        if (!v) return dflt;
        try {
            std::size_t pos = 0;
            const double x = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw ConfigError(full + ": '" + *v + "' is not a number");
        }
    }

    int integer(const std::string& full, int dflt) {
        auto v = raw(full);
        if (!v) return dflt;
        try {
            std::size_t pos = 0;
            const long x = std::stol(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing");
            return static_cast<int>(x);
        } catch (...) {
            throw ConfigError(full + ": '" + *v + "' is not an integer");
        }
    }

    std::uint64_t u64(const std::string& full, std::uint64_t dflt) {
        auto v = raw(full);
        if (!v) return dflt;
        try {
            std::size_t pos = 0;
            const unsigned long long x = std::stoull(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw ConfigError(full + ": '" + *v + "' is not an unsigned integer");
        }
    }

    bool boolean(const std::string& full, bool dflt) {
        auto v = raw(full);
        if (!v) return dflt;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError(full + ": '" + *v + "' is not a boolean");
    }

    std::string text(const std::string& full, const std::string& dflt) {
        auto v = raw(full);
        return v ? *v : dflt;
    }

    void finish() const {
        for (const auto& [k, v] : keys)
            if (!seen.count(k)) throw ConfigError("unknown key '" + k + "'");
    }
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    Reader r{parse_ini(text), {}};
    RunConfig cfg;

    cfg.dataset.seed = r.u64("dataset.seed", cfg.dataset.seed);
    cfg.dataset.n_scenarios = r.integer("dataset.n_scenarios", cfg.dataset.n_scenarios);
    require(cfg.dataset.n_scenarios > 0, "dataset.n_scenarios: must be positive");
    if (auto v = r.raw("dataset.obstacle_count_probs")) {
        const auto parts = split_list(*v);
        require(parts.size() == kMaxObstacles + 1,
                "dataset.obstacle_count_probs: expected 4 comma-separated values");
        for (std::size_t i = 0; i < parts.size(); ++i) {
            try {
                cfg.dataset.obstacle_count_probs[i] = std::stod(parts[i]);
            } catch (...) {
                throw ConfigError("dataset.obstacle_count_probs: '" + parts[i] + "' is not a number");
            }
        }
    }
    cfg.dataset.ego_speed_min = r.real("dataset.ego_speed_min", cfg.dataset.ego_speed_min);
    cfg.dataset.ego_speed_max = r.real("dataset.ego_speed_max", cfg.dataset.ego_speed_max);
    cfg.dataset.obs_speed_min = r.real("dataset.obs_speed_min", cfg.dataset.obs_speed_min);
    cfg.dataset.obs_speed_max = r.real("dataset.obs_speed_max", cfg.dataset.obs_speed_max);
    cfg.dataset.split_fraction = r.real("dataset.split_fraction", cfg.dataset.split_fraction);
    try {
        cfg.dataset.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }

    cfg.model_seed = r.u64("model.seed", cfg.model_seed);

    if (auto v = r.raw("train.method")) {
        try {
            cfg.train_method = train_method_from_string(*v);
        } catch (...) {
            throw ConfigError("train.method: unknown method '" + *v + "'");
        }
    }
    cfg.finetune_epochs = r.integer("train.epochs", cfg.finetune_epochs);
    cfg.pretrain_epochs = r.integer("train.pretrain_epochs", cfg.pretrain_epochs);
    cfg.batch_size = r.integer("train.batch_size", cfg.batch_size);
    cfg.pretrain_lr = r.real("train.pretrain_lr", cfg.pretrain_lr);
    cfg.finetune_lr = r.real("train.finetune_lr", cfg.finetune_lr);
    require(cfg.finetune_epochs >= 0, "train.epochs: must be >= 0");
    require(cfg.pretrain_epochs >= 0, "train.pretrain_epochs: must be >= 0");
    require(cfg.batch_size > 0, "train.batch_size: must be positive");
    require(cfg.pretrain_lr > 0, "train.pretrain_lr: must be positive");
    require(cfg.finetune_lr > 0, "train.finetune_lr: must be positive");
    {
        const std::string opt = r.text("train.optimizer", "adam");
        if (opt == "adam")
            cfg.optimizer = OptKind::adam;
        else if (opt == "sgd")
            cfg.optimizer = OptKind::sgd;
        else
            throw ConfigError("train.optimizer: unknown optimizer '" + opt + "'");
    }
    cfg.attack_steps = r.integer("train.attack_steps", cfg.attack_steps);
    require(cfg.attack_steps >= 0, "train.attack_steps: must be >= 0");
    cfg.image_eps = r.real("train.image_eps", cfg.image_eps);
    require(cfg.image_eps >= 0, "train.image_eps: must be >= 0");
    if (auto v = r.raw("train.frozen")) {
        for (const auto& name : split_list(*v)) {
            try {
                cfg.frozen.push_back(module_from_string(name));
            } catch (...) {
                throw ConfigError("train.frozen: unknown module '" + name + "'");
            }
        }
    }

    if (auto v = r.raw("attack.method")) {
        try {
            cfg.attack_method = attack_method_from_string(*v);
        } catch (...) {
            throw ConfigError("attack.method: unknown method '" + *v + "'");
        }
    }
    if (auto v = r.raw("attack.norm")) {
        try {
            cfg.attack_norm = norm_from_string(*v);
        } catch (...) {
            throw ConfigError("attack.norm: unknown norm '" + *v + "'");
        }
    }
    if (auto v = r.raw("attack.objective")) {
        try {
            cfg.attack_objective = objective_from_string(*v);
        } catch (...) {
            throw ConfigError("attack.objective: unknown objective '" + *v + "'");
        }
    }
    cfg.attack_eps = r.real("attack.eps", cfg.attack_eps);
    cfg.attack_l1_eps = r.real("attack.l1_eps", cfg.attack_l1_eps);
    cfg.attack_l2_eps = r.real("attack.l2_eps", cfg.attack_l2_eps);
    require(cfg.attack_eps >= 0, "attack.eps: must be >= 0");
    require(cfg.attack_l1_eps >= 0, "attack.l1_eps: must be >= 0");
    require(cfg.attack_l2_eps >= 0, "attack.l2_eps: must be >= 0");
    cfg.eval_attack_steps = r.integer("attack.steps", cfg.eval_attack_steps);
    cfg.attack_restarts = r.integer("attack.restarts", cfg.attack_restarts);
    cfg.attack_momentum = r.real("attack.momentum", cfg.attack_momentum);
    require(cfg.eval_attack_steps >= 0, "attack.steps: must be >= 0");
    require(cfg.attack_restarts >= 1, "attack.restarts: must be >= 1");
    require(cfg.attack_momentum >= 0, "attack.momentum: must be >= 0");
    const std::pair<const char*, SiteId> site_keys[] = {
        {"attack.images", SiteId::Images},
        {"attack.track_motion", SiteId::TrackMotion},
        {"attack.map_motion", SiteId::MapMotion},
        {"attack.motion_occ", SiteId::MotionOcc},
        {"attack.motion_plan", SiteId::MotionPlan},
    };
    for (const auto& [key, id] : site_keys) {
        const double v = r.real(key, cfg.site_budgets.at(id));
        require(v >= 0, std::string(key) + ": must be >= 0");
        cfg.site_budgets[id] = v;
    }

    cfg.dwaa_enabled = r.boolean("dwaa.enabled", cfg.dwaa_enabled);
    cfg.dwaa_r = r.real("dwaa.r", cfg.dwaa_r);
    cfg.dwaa_update_period = r.integer("dwaa.update_period", cfg.dwaa_update_period);
    require(cfg.dwaa_r >= 0.0 && cfg.dwaa_r < 1.0, "dwaa.r: must be in [0,1)");
    require(cfg.dwaa_update_period > 0, "dwaa.update_period: must be positive");

    cfg.eval_samples = r.integer("eval.n_samples", cfg.eval_samples);
    require(cfg.eval_samples > 0, "eval.n_samples: must be positive");
    if (auto v = r.raw("eval.seeds")) {
        cfg.eval_seeds.clear();
        for (const auto& s : split_list(*v)) {
            try {
                cfg.eval_seeds.push_back(std::stoull(s));
            } catch (...) {
                throw ConfigError("eval.seeds: '" + s + "' is not an unsigned integer");
            }
        }
        require(!cfg.eval_seeds.empty(), "eval.seeds: at least one seed required");
    }

    cfg.sim_episode_length = r.integer("sim.episode_length", cfg.sim_episode_length);
    cfg.sim_episodes = r.integer("sim.n_episodes", cfg.sim_episodes);
    cfg.sim_collision_radius = r.real("sim.collision_radius", cfg.sim_collision_radius);
    require(cfg.sim_episode_length > 0, "sim.episode_length: must be positive");
    require(cfg.sim_episodes > 0, "sim.n_episodes: must be positive");
    require(cfg.sim_collision_radius > 0, "sim.collision_radius: must be positive");
    if (auto v = r.raw("sim.target_distance")) {
        if (!v->empty()) {
            try {
                cfg.sim_target_distance = std::stod(*v);
            } catch (...) {
                throw ConfigError("sim.target_distance: '" + *v + "' is not a number");
            }
            require(*cfg.sim_target_distance > 0, "sim.target_distance: must be positive");
        }
    }
    cfg.sim_attack_eps = r.real("sim.attack_eps", cfg.sim_attack_eps);
    require(cfg.sim_attack_eps >= 0, "sim.attack_eps: must be >= 0");
    cfg.noise_epochs = r.integer("sim.noise_epochs", cfg.noise_epochs);
    cfg.noise_batch = r.integer("sim.noise_batch", cfg.noise_batch);
    require(cfg.noise_epochs > 0, "sim.noise_epochs: must be positive");
    require(cfg.noise_batch > 0, "sim.noise_batch: must be positive");

    r.finish();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "[dataset]\n";
    os << "seed = " << dataset.seed << "\n";
    os << "n_scenarios = " << dataset.n_scenarios << "\n";
    os << "obstacle_count_probs = ";
    for (std::size_t i = 0; i < dataset.obstacle_count_probs.size(); ++i)
        os << (i ? "," : "") << dataset.obstacle_count_probs[i];
    os << "\n";
    os << "ego_speed_min = " << dataset.ego_speed_min << "\n";
    os << "ego_speed_max = " << dataset.ego_speed_max << "\n";
    os << "obs_speed_min = " << dataset.obs_speed_min << "\n";
    os << "obs_speed_max = " << dataset.obs_speed_max << "\n";
    os << "split_fraction = " << dataset.split_fraction << "\n";
    os << "\n[model]\n";
    os << "seed = " << model_seed << "\n";
    os << "\n[train]\n";
    os << "method = " << to_string(train_method) << "\n";
    os << "epochs = " << finetune_epochs << "\n";
    os << "pretrain_epochs = " << pretrain_epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "pretrain_lr = " << pretrain_lr << "\n";
    os << "finetune_lr = " << finetune_lr << "\n";
    os << "optimizer = " << (optimizer == OptKind::adam ? "adam" : "sgd") << "\n";
    os << "attack_steps = " << attack_steps << "\n";
    os << "image_eps = " << image_eps << "\n";
    os << "frozen = ";
    for (std::size_t i = 0; i < frozen.size(); ++i) os << (i ? "," : "") << to_string(frozen[i]);
    os << "\n";
    os << "\n[attack]\n";
    os << "method = " << to_string(attack_method) << "\n";
    os << "norm = " << to_string(attack_norm) << "\n";
    os << "objective = " << to_string(attack_objective) << "\n";
    os << "eps = " << attack_eps << "\n";
    os << "l1_eps = " << attack_l1_eps << "\n";
    os << "l2_eps = " << attack_l2_eps << "\n";
    os << "steps = " << eval_attack_steps << "\n";
    os << "restarts = " << attack_restarts << "\n";
    os << "momentum = " << attack_momentum << "\n";
    os << "images = " << site_budgets.at(SiteId::Images) << "\n";
    os << "track_motion = " << site_budgets.at(SiteId::TrackMotion) << "\n";
    os << "map_motion = " << site_budgets.at(SiteId::MapMotion) << "\n";
    os << "motion_occ = " << site_budgets.at(SiteId::MotionOcc) << "\n";
    os << "motion_plan = " << site_budgets.at(SiteId::MotionPlan) << "\n";
    os << "\n[dwaa]\n";
    os << "enabled = " << (dwaa_enabled ? "true" : "false") << "\n";
    os << "r = " << dwaa_r << "\n";
    os << "update_period = " << dwaa_update_period << "\n";
    os << "\n[eval]\n";
    os << "n_samples = " << eval_samples << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < eval_seeds.size(); ++i) os << (i ? "," : "") << eval_seeds[i];
    os << "\n";
    os << "\n[sim]\n";
    os << "episode_length = " << sim_episode_length << "\n";
    os << "n_episodes = " << sim_episodes << "\n";
    os << "collision_radius = " << sim_collision_radius << "\n";
    os << "target_distance = ";
    if (sim_target_distance) os << *sim_target_distance;
    os << "\n";
    os << "attack_eps = " << sim_attack_eps << "\n";
    os << "noise_epochs = " << noise_epochs << "\n";
    os << "noise_batch = " << noise_batch << "\n";
    return os.str();
}

std::uint64_t RunConfig::hash() const {
    const std::string s = canonical();
    return fnv1a64(s.data(), s.size());
}

TrainConfig RunConfig::pretrain_config(std::uint64_t seed) const {
    TrainConfig t;
    t.method = TrainMethod::clean;
    t.epochs = pretrain_epochs;
    t.batch_size = batch_size;
    t.learning_rate = pretrain_lr;
    t.optimizer = optimizer;
    t.seed = seed;
    return t;
}

TrainConfig RunConfig::finetune_config(TrainMethod method, std::uint64_t seed) const {
    TrainConfig t;
    t.method = method;
    t.epochs = finetune_epochs;
    t.batch_size = batch_size;
    t.learning_rate = finetune_lr;
    t.optimizer = optimizer;
    t.attack_steps = method == TrainMethod::fat ? 1 : attack_steps;
    t.image_eps = image_eps;
    if (method == TrainMethod::ma2t) t.budgets = site_budgets;
    t.dwaa_enabled = method == TrainMethod::ma2t && dwaa_enabled;
    t.dwaa_r = dwaa_r;
    t.dwaa_update_period = dwaa_update_period;
    t.frozen = frozen;
    t.seed = seed;
    return t;
}

double RunConfig::image_eps_for_norm(Norm p) const {
    switch (p) {
        case Norm::l1: return attack_l1_eps;
        case Norm::l2: return attack_l2_eps;
        case Norm::linf: return attack_eps;
    }
    return attack_eps;
}

AttackConfig RunConfig::eval_attack_config(bool module_wise) const {
    AttackConfig a;
    a.method = attack_method;
    a.norm = attack_norm;
    a.objective = attack_objective;
    a.steps = attack_method == AttackMethod::fgsm ? 1 : eval_attack_steps;
    a.restarts = attack_restarts;
    a.momentum = attack_momentum;
    if (module_wise)
        a.budgets = site_budgets;
    else
        a.budgets = {{SiteId::Images, image_eps_for_norm(attack_norm)}};
    return a;
}

void write_resolved_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write resolved config to '" + path.string() + "'");
    os << cfg.canonical();
}

}  // namespace mwat
