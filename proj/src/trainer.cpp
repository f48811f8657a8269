#include "mwat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mwat {

const char* to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::clean: return "clean";
        case TrainMethod::ma2t: return "ma2t";
        case TrainMethod::fat: return "fat";
        case TrainMethod::pgd_l1: return "pgd_l1";
        case TrainMethod::pgd_l2: return "pgd_l2";
        case TrainMethod::pgd_linf: return "pgd_linf";
    }
    return "?";
}

TrainMethod train_method_from_string(const std::string& s) {
    if (s == "clean") return TrainMethod::clean;
    if (s == "ma2t") return TrainMethod::ma2t;
    if (s == "fat") return TrainMethod::fat;
    if (s == "pgd_l1" || s == "pgd-l1") return TrainMethod::pgd_l1;
    if (s == "pgd_l2" || s == "pgd-l2") return TrainMethod::pgd_l2;
    if (s == "pgd_linf" || s == "pgd-linf") return TrainMethod::pgd_linf;
    throw ContractError("unknown train method '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ContractError("train: epochs must be >= 0");
    if (batch_size <= 0) throw ContractError("train: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ContractError("train: learning_rate must be positive");
    if (attack_steps < 0) throw ContractError("train: attack_steps must be >= 0");
    if (method == TrainMethod::fat && attack_steps != 1)
        throw ContractError("train: fat uses single-step FGSM (attack_steps must be 1)");
    if (image_eps < 0.0) throw ContractError("train: image_eps must be >= 0");
    if (!(dwaa_r >= 0.0 && dwaa_r < 1.0)) throw ContractError("train: dwaa_r must be in [0,1)");
    if (dwaa_update_period <= 0) throw ContractError("train: dwaa_update_period must be positive");
}

std::optional<AttackConfig> TrainConfig::inner_attack(const Pipeline& model) const {
    AttackConfig atk;
    atk.steps = attack_steps;
    atk.restarts = 1;  // the inner maximization runs a single start per batch
    atk.objective = Objective::total_loss;
    atk.norm = Norm::linf;
    switch (method) {
        case TrainMethod::clean:
            return std::nullopt;
        case TrainMethod::ma2t:
            atk.method = AttackMethod::pgd;
            atk.budgets = budgets.empty() ? default_budgets(model) : budgets;
            return atk;
        case TrainMethod::fat:
            atk.method = AttackMethod::fgsm;
            atk.steps = 1;
            atk.budgets = {{SiteId::Images, image_eps}};
            return atk;
        case TrainMethod::pgd_l1:
            atk.method = AttackMethod::pgd;
            atk.norm = Norm::l1;
            atk.budgets = {{SiteId::Images, image_eps}};
            return atk;
        case TrainMethod::pgd_l2:
            atk.method = AttackMethod::pgd;
            atk.norm = Norm::l2;
            atk.budgets = {{SiteId::Images, image_eps}};
            return atk;
        case TrainMethod::pgd_linf:
            atk.method = AttackMethod::pgd;
            atk.budgets = {{SiteId::Images, image_eps}};
            return atk;
    }
    return std::nullopt;
}

std::uint64_t train_config_hash(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "method=" << to_string(cfg.method) << ";epochs=" << cfg.epochs
       << ";batch_size=" << cfg.batch_size << ";lr=" << cfg.learning_rate
       << ";opt=" << (cfg.optimizer == OptKind::adam ? "adam" : "sgd")
       << ";attack_steps=" << cfg.attack_steps << ";image_eps=" << cfg.image_eps << ";budgets=";
    for (const auto& [id, eps] : cfg.budgets) os << to_string(id) << ":" << eps << ",";
    os << ";dwaa=" << cfg.dwaa_enabled << ":" << cfg.dwaa_r << ":" << cfg.dwaa_update_period
       << ";frozen=";
    for (ModuleId id : cfg.frozen) os << to_string(id) << ",";
    os << ";seed=" << cfg.seed;
    const std::string s = os.str();
    return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// checkpoints: "MWCK" | version | arch | method | seed | epoch | dwaa | params

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4b43574d;  // "MWCK"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of checkpoint");
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
    if (!is) throw IoError("unexpected end of checkpoint");
    return s;
}

void put_dwaa(std::ostream& os, const DwaaState& d) {
    put(os, d.r());
    put<std::int32_t>(os, d.update_period());
    put<std::int32_t>(os, d.updates_done());
    for (double w : d.current_weights()) put(os, w);
    auto put_slot = [&](const std::optional<std::array<double, kNumModules>>& slot) {
        put<std::uint8_t>(os, slot ? 1 : 0);
        const std::array<double, kNumModules> z{};
        for (double v : slot ? *slot : z) put(os, v);
    };
    put_slot(d.history_prev());
    put_slot(d.history_prev2());
}

DwaaState get_dwaa(std::istream& is) {
    const double r = get<double>(is);
    const int period = get<std::int32_t>(is);
    const int t = get<std::int32_t>(is);
    std::array<double, kNumModules> w{};
    for (auto& v : w) v = get<double>(is);
    auto get_slot = [&]() -> std::optional<std::array<double, kNumModules>> {
        const bool has = get<std::uint8_t>(is) != 0;
        std::array<double, kNumModules> s{};
        for (auto& v : s) v = get<double>(is);
        if (!has) return std::nullopt;
        return s;
    };
    auto prev = get_slot();
    auto prev2 = get_slot();
    DwaaState d(r, period);
    d.restore(w, prev, prev2, t);
    return d;
}

}  // namespace

std::uint64_t Checkpoint::content_hash() const {
    std::uint64_t h = fnv1a64(arch_tag.data(), arch_tag.size());
    h = fnv1a64(method.data(), method.size(), h);
    h = fnv1a64(&seed, sizeof(seed), h);
    h = fnv1a64(&epoch, sizeof(epoch), h);
    for (const auto& p : params) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        h = fnv1a64(p.value.data().data(), static_cast<std::size_t>(p.value.size()) * sizeof(double), h);
    }
    return h;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    put(os, kCheckpointMagic);
    put(os, kCheckpointVersion);
    put_string(os, ckpt.arch_tag);
    put_string(os, ckpt.method);
    put(os, ckpt.seed);
    put<std::int32_t>(os, ckpt.epoch);
    put_dwaa(os, ckpt.dwaa);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
        put_string(os, p.name);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.ndim()));
        for (int d : p.value.shape()) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(p.value.data().data()),
                 static_cast<std::streamsize>(p.value.size() * static_cast<int>(sizeof(double))));
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    if (get<std::uint32_t>(is) != kCheckpointMagic) throw IoError("not a checkpoint: " + path.string());
    if (get<std::uint32_t>(is) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    Checkpoint c;
    c.arch_tag = get_string(is);
    c.method = get_string(is);
    c.seed = get<std::uint64_t>(is);
    c.epoch = get<std::int32_t>(is);
    c.dwaa = get_dwaa(is);
    const auto n = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        Param p;
        p.name = get_string(is);
        const auto ndim = get<std::uint32_t>(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = get<std::int32_t>(is);
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw IoError("unexpected end of checkpoint");
        p.value = Tensor(shape, std::move(data));
        c.params.push_back(std::move(p));
    }
    return c;
}

Checkpoint checkpoint_from_pipeline(const Pipeline& model, const std::string& method,
                                    std::uint64_t seed, int epoch, const DwaaState* dwaa) {
    Checkpoint c;
    c.arch_tag = model.arch_tag;
    c.method = method;
    c.seed = seed;
    c.epoch = epoch;
    if (dwaa) c.dwaa = *dwaa;
    for (const auto& [name, t] : model.parameters()) c.params.push_back({name, t->detached()});
    return c;
}

Pipeline pipeline_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.arch_tag != kArchTag)
        throw ContractError("checkpoint architecture '" + ckpt.arch_tag + "' does not match '" +
                            kArchTag + "'");
    Pipeline model = build_reference_model(0);
    auto params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw ContractError("checkpoint parameter list does not match the architecture");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, slot] = params[i];
        const Param& p = ckpt.params[i];
        if (p.name != name || !(p.value.shape() == slot->shape()))
            throw ContractError("checkpoint parameter '" + p.name + "' does not match '" + name + "'");
        *slot = p.value.detached();
    }
    return model;
}

// ---------------------------------------------------------------------------
// training loops

namespace {

struct Batch {
    Tensor obs;
    TargetBatch targets;
    int size = 0;
};

Batch assemble_batch(const Dataset& data, const std::vector<int>& order, int start, int count) {
    std::vector<Observation> obs;
    std::vector<Labels> labels;
    obs.reserve(static_cast<std::size_t>(count));
    labels.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        obs.push_back(data.observations[static_cast<std::size_t>(idx)]);
        labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
    }
    Batch b;
    b.obs = make_observation_batch(obs);
    b.targets = make_target_batch(labels);
    b.size = count;
    return b;
}

TrainResult run_training(Pipeline& model, const Dataset& train, const TrainConfig& cfg,
                         int start_epoch) {
    cfg.validate();
    if (train.size() == 0) throw ContractError("train: dataset is empty");

    TrainResult result;
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.learning_rate = cfg.learning_rate;
    DwaaState dwaa(cfg.dwaa_r, cfg.dwaa_update_period);
    Rng data_rng(cfg.seed, Stream::data);
    Rng attack_rng(cfg.seed, Stream::attack);

    model.unfreeze_all();
    model.freeze_modules(cfg.frozen);
    const auto inner = cfg.inner_attack(model);
    const std::vector<double> unit(kNumModules, 1.0);

    const int batches_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const int total_batches = cfg.epochs * batches_per_epoch;

    Checkpoint last_good = checkpoint_from_pipeline(model, to_string(cfg.method), cfg.seed, start_epoch);
    std::array<double, kNumModules> window_acc{};
    int window_count = 0;
    int b = 0;

    for (int epoch = 0; epoch < cfg.epochs && !result.aborted; ++epoch) {
        std::vector<int> order = data_rng.permutation(train.size());
        for (int start = 0; start < train.size() && !result.aborted; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, train.size() - start);
            Batch batch = assemble_batch(train, order, start, count);
            ++b;
            BatchLogRow row;
            row.batch = b;
            try {
                PerturbationSet noise;
                if (inner) noise = run_attack(model, batch.obs, batch.targets, *inner, attack_rng);

                Tape tape;
                for (auto& [name, t] : model.parameters()) tape.watch(*t);
                Tensor weighted;
                ForwardResult fr;
                {
                    Tape::Scope scope(tape);
                    fr = model.forward_with_noise(batch.obs, &batch.targets,
                                                  inner ? &noise : nullptr);
                    weighted = total_loss(fr.losses,
                                          cfg.dwaa_enabled ? dwaa.current_weights_vec() : unit);
                }
                Gradients grads = backward(weighted, tape);
                auto trainable = model.trainable_parameters();
                std::map<std::string, Tensor> grad_map;
                for (auto& [name, t] : trainable) grad_map.emplace(name, grads.grad(*t));
                optimizer_step(trainable, grad_map, opt);

                for (int j = 0; j < kNumModules; ++j)
                    row.losses[static_cast<std::size_t>(j)] =
                        fr.losses.per_module[static_cast<std::size_t>(j)].item();
                row.total = weighted.item();
                result.final_train_loss = fr.losses.total.item();

                for (int j = 0; j < kNumModules; ++j)
                    window_acc[static_cast<std::size_t>(j)] += row.losses[static_cast<std::size_t>(j)];
                ++window_count;
                last_good = checkpoint_from_pipeline(model, to_string(cfg.method), cfg.seed,
                                                     start_epoch + epoch + 1, &dwaa);
            } catch (const NumericError&) {
                row.skipped = true;
                ++result.skipped_batches;
                if (result.skipped_batches > std::max(1, total_batches / 100)) result.aborted = true;
            }
            result.batch_log.push_back(row);

            if (cfg.dwaa_enabled && b % cfg.dwaa_update_period == 0 && window_count > 0) {
                std::array<double, kNumModules> means{};
                for (int j = 0; j < kNumModules; ++j)
                    means[static_cast<std::size_t>(j)] =
                        window_acc[static_cast<std::size_t>(j)] / window_count;
                dwaa.step_window(means);
                DwaaLogRow wrow;
                wrow.update_index = b / cfg.dwaa_update_period;
                wrow.weights = dwaa.current_weights();
                result.dwaa_log.push_back(wrow);
                window_acc.fill(0.0);
                window_count = 0;
            }
        }
    }

    result.checkpoint = result.aborted
                            ? last_good
                            : checkpoint_from_pipeline(model, to_string(cfg.method), cfg.seed,
                                                       start_epoch + cfg.epochs, &dwaa);
    return result;
}

}  // namespace

TrainResult pretrain_clean(const Dataset& train, const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.method = TrainMethod::clean;
    Pipeline model = build_reference_model(c.seed);
    return run_training(model, train, c, 0);
}

TrainResult finetune(const Checkpoint& pretrained, const Dataset& train, const TrainConfig& cfg) {
    Pipeline model = pipeline_from_checkpoint(pretrained);
    return run_training(model, train, cfg, pretrained.epoch);
}

double evaluate_loss(const Pipeline& model, const Dataset& data, int batch_size) {
    if (data.size() == 0) throw ContractError("evaluate_loss: dataset is empty");
    double total = 0.0;
    for (int start = 0; start < data.size(); start += batch_size) {
        const int n = std::min(batch_size, data.size() - start);
        Tensor obs = make_observation_batch(
            std::span(data.observations.data() + start, static_cast<std::size_t>(n)));
        TargetBatch targets =
            make_target_batch(std::span(data.labels.data() + start, static_cast<std::size_t>(n)));
        ForwardResult fr = model.forward(obs, targets);
        total += fr.losses.total.item() * n;
    }
    return total / data.size();
}

void write_batch_log(const std::filesystem::path& path, const std::vector<BatchLogRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << "batch,L_Track,L_Map,L_Motion,L_Occ,L_Plan,L_total,skipped\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.batch;
        for (double v : r.losses) os << "," << v;
        os << "," << r.total << "," << (r.skipped ? 1 : 0) << "\n";
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

void write_dwaa_log(const std::filesystem::path& path, const std::vector<DwaaLogRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << "update_index,W_Track,W_Map,W_Motion,W_Occ,W_Plan\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.update_index;
        for (double w : r.weights) os << "," << w;
        os << "\n";
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

void train_log_emit(const std::filesystem::path& dir, const TrainResult& result,
                    const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    write_batch_log(dir / "batch_log.csv", result.batch_log);
    write_dwaa_log(dir / "dwaa_log.csv", result.dwaa_log);
    save_checkpoint(dir / "checkpoint.mwck", result.checkpoint);
    std::ofstream os(dir / "train_config_hash.txt");
    os << hex64(train_config_hash(cfg)) << "\n";
}

}  // namespace mwat
