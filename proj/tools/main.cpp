#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mwat/attacks.hpp"
#include "mwat/config.hpp"
#include "mwat/driving.hpp"
#include "mwat/eval.hpp"
#include "mwat/sim.hpp"
#include "mwat/trainer.hpp"

namespace fs = std::filesystem;
using namespace mwat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

struct Cli {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = "runs";
    int threads = 1;
    bool force = false;

    RunConfig cfg;
    fs::path run_dir;
    std::vector<std::pair<std::string, std::uint64_t>> input_hashes;

    void resolve_config() {
        cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed_set) {
            cfg.model_seed = seed;
            cfg.dataset.seed = seed;
        }
    }

    // One run directory per invocation: <out>/<cmd>-<confighash8>-s<seed>.
    void open_run_dir(const std::string& cmd) {
        const std::string tag =
            cmd + "-" + hex64(cfg.hash()).substr(8) + "-s" + std::to_string(effective_seed());
        run_dir = fs::path(out_dir) / tag;
        if (fs::exists(run_dir)) {
            if (!force)
                throw ConfigError("run directory '" + run_dir.string() +
                                  "' exists; pass --force to overwrite");
            fs::remove_all(run_dir);
        }
        fs::create_directories(run_dir);
        write_resolved_config(run_dir / "resolved.ini", cfg);
    }

    std::uint64_t effective_seed() const { return seed_set ? seed : cfg.model_seed; }

    void note_input(const fs::path& path) { input_hashes.emplace_back(path.string(), file_hash(path)); }

    void finish_run() const {
        std::ofstream os(run_dir / "inputs.txt");
        for (const auto& [path, hash] : input_hashes) os << hex64(hash) << "  " << path << "\n";
        std::ofstream ss(run_dir / "seed.txt");
        ss << effective_seed() << "\n";
    }
};

Dataset load_split(Cli& cli, const std::string& data_dir, const std::string& split) {
    const fs::path path = fs::path(data_dir) / (split + ".mwds");
    cli.note_input(path);
    return load_dataset(path);
}

Checkpoint load_ckpt(Cli& cli, const std::string& path) {
    cli.note_input(path);
    return load_checkpoint(path);
}

std::vector<AttackRow> rows_for_eval(const RunConfig& cfg, bool adaptive) {
    std::vector<AttackRow> rows =
        default_whitebox_attacks(cfg.attack_eps, cfg.eval_attack_steps, cfg.attack_restarts);
    for (auto& row : rows) {
        if (row.cfg.norm == Norm::l1) row.cfg.budgets[SiteId::Images] = cfg.attack_l1_eps;
        if (row.cfg.norm == Norm::l2) row.cfg.budgets[SiteId::Images] = cfg.attack_l2_eps;
    }
    if (adaptive) {
        for (auto& row : adaptive_attacks(cfg.eval_attack_steps, cfg.attack_restarts)) {
            row.cfg.budgets = cfg.site_budgets;
            rows.push_back(row);
        }
    }
    return rows;
}

int run(int argc, char** argv) {
    CLI::App app{"module-wise adversarial training toolkit for a toy driving pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may appear after the subcommand
    Cli cli;

    app.add_option("--config", cli.config_path, "run configuration file (INI)");
    auto* seed_opt = app.add_option("--seed", cli.seed, "seed overriding the configured one");
    app.add_option("--out", cli.out_dir, "directory that receives run directories");
    app.add_option("--threads", cli.threads, "parallelism for independent jobs")
        ->check(CLI::PositiveNumber);
    app.add_flag("--force", cli.force, "overwrite an existing run directory");

    auto* gen = app.add_subcommand("gen-data", "generate the scenario dataset splits");

    auto* pre = app.add_subcommand("pretrain", "clean-pretrain the reference model");
    std::string pre_data;
    pre->add_option("--data", pre_data, "directory with train.mwds/val.mwds")->required();

    auto* fin = app.add_subcommand("finetune", "adversarially fine-tune a pretrained model");
    std::string fin_method = "ma2t", fin_data, fin_pretrained;
    fin->add_option("--method", fin_method, "ma2t|fat|pgd-l1|pgd-l2|pgd-linf|clean");
    fin->add_option("--data", fin_data, "directory with train.mwds/val.mwds")->required();
    fin->add_option("--pretrained", fin_pretrained, "pretrained checkpoint")->required();

    auto* atk = app.add_subcommand("attack", "run one attack against a checkpoint");
    std::string atk_ckpt, atk_data, atk_method, atk_norm, atk_objective, atk_delta_out;
    double atk_eps = -1.0;
    int atk_steps = -1, atk_restarts = -1, atk_samples = -1;
    bool atk_module_wise = false;
    atk->add_option("--checkpoint", atk_ckpt)->required();
    atk->add_option("--data", atk_data)->required();
    atk->add_option("--method", atk_method, "fgsm|mifgsm|pgd");
    atk->add_option("--norm", atk_norm, "l1|l2|linf");
    atk->add_option("--objective", atk_objective, "total_loss|sub_loss|plan_loss");
    atk->add_option("--eps", atk_eps, "image-site budget");
    atk->add_option("--steps", atk_steps);
    atk->add_option("--restarts", atk_restarts);
    atk->add_option("--samples", atk_samples);
    atk->add_flag("--module-wise", atk_module_wise, "attack all five sites");
    atk->add_option("--save-delta", atk_delta_out, "save the first chunk's perturbations");

    auto* ewb = app.add_subcommand("eval-whitebox", "white-box robustness matrix");
    std::string ewb_ckpt, ewb_data;
    bool ewb_adaptive = false;
    int ewb_samples = -1;
    ewb->add_option("--checkpoint", ewb_ckpt)->required();
    ewb->add_option("--data", ewb_data)->required();
    ewb->add_flag("--adaptive", ewb_adaptive, "append the three adaptive attack rows");
    ewb->add_option("--samples", ewb_samples);

    auto* ebb = app.add_subcommand("eval-blackbox", "transfer robustness matrix");
    std::string ebb_victim, ebb_data;
    std::vector<std::string> ebb_surrogates;
    int ebb_samples = -1;
    ebb->add_option("--victim", ebb_victim)->required();
    ebb->add_option("--surrogate", ebb_surrogates, "surrogate checkpoint (repeatable)")->required();
    ebb->add_option("--data", ebb_data)->required();
    ebb->add_option("--samples", ebb_samples);

    auto* eco = app.add_subcommand("eval-corruption", "natural corruption matrix");
    std::string eco_ckpt, eco_data;
    int eco_samples = -1;
    eco->add_option("--checkpoint", eco_ckpt)->required();
    eco->add_option("--data", eco_data)->required();
    eco->add_option("--samples", eco_samples);

    auto* sim = app.add_subcommand("simulate", "closed-loop evaluation");
    std::string sim_ckpt, sim_noise, sim_data;
    bool sim_train_noise = false;
    sim->add_option("--checkpoint", sim_ckpt)->required();
    sim->add_option("--universal-noise", sim_noise, "perturbation file with an Images delta");
    sim->add_flag("--train-noise", sim_train_noise, "optimize a universal noise first");
    sim->add_option("--data", sim_data, "dataset dir (needed by --train-noise)");

    auto* rep = app.add_subcommand("report", "validate and merge run report bundles");
    std::vector<std::string> rep_runs;
    rep->add_option("--run", rep_runs, "run directory containing report_bundle.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    cli.seed_set = seed_opt->count() > 0;

    try {
        cli.resolve_config();
        const std::uint64_t run_seed = cli.effective_seed();
        const std::uint64_t eval_seed_base = cli.seed_set ? cli.seed : cli.cfg.eval_seeds.front();
        std::vector<std::uint64_t> eval_seeds = cli.cfg.eval_seeds;
        if (cli.seed_set) {
            eval_seeds.clear();
            for (std::size_t i = 0; i < cli.cfg.eval_seeds.size(); ++i)
                eval_seeds.push_back(eval_seed_base + i);
        }

        if (*gen) {
            cli.open_run_dir("gen-data");
            auto [train, val] = build_dataset(cli.cfg.dataset);
            fs::create_directories(cli.run_dir / "dataset");
            save_dataset(cli.run_dir / "dataset" / "train.mwds", train);
            save_dataset(cli.run_dir / "dataset" / "val.mwds", val);
            cli.finish_run();
            std::cout << "dataset: " << train.size() << " train / " << val.size() << " val -> "
                      << (cli.run_dir / "dataset").string() << "\n";
        } else if (*pre) {
            cli.open_run_dir("pretrain");
            Dataset train = load_split(cli, pre_data, "train");
            Dataset val = load_split(cli, pre_data, "val");
            TrainResult r = pretrain_clean(train, cli.cfg.pretrain_config(run_seed));
            train_log_emit(cli.run_dir, r, cli.cfg.pretrain_config(run_seed));
            cli.finish_run();
            Pipeline model = pipeline_from_checkpoint(r.checkpoint);
            std::cout << "pretrain: " << r.batch_log.size() << " batches, val loss "
                      << evaluate_loss(model, val) << " -> "
                      << (cli.run_dir / "checkpoint.mwck").string() << "\n";
            if (r.aborted) return kExitRuntime;
        } else if (*fin) {
            cli.open_run_dir("finetune");
            Dataset train = load_split(cli, fin_data, "train");
            Dataset val = load_split(cli, fin_data, "val");
            Checkpoint pre_ckpt = load_ckpt(cli, fin_pretrained);
            const TrainMethod method = train_method_from_string(fin_method);
            TrainConfig tc = cli.cfg.finetune_config(method, run_seed);
            TrainResult r = finetune(pre_ckpt, train, tc);
            train_log_emit(cli.run_dir, r, tc);
            cli.finish_run();
            Pipeline model = pipeline_from_checkpoint(r.checkpoint);
            std::cout << "finetune[" << to_string(method) << "]: " << r.batch_log.size()
                      << " batches, " << r.skipped_batches << " skipped, val loss "
                      << evaluate_loss(model, val) << " -> "
                      << (cli.run_dir / "checkpoint.mwck").string() << "\n";
            if (r.aborted) return kExitRuntime;
        } else if (*atk) {
            cli.open_run_dir("attack");
            Checkpoint victim = load_ckpt(cli, atk_ckpt);
            Dataset val = load_split(cli, atk_data, "val");
            AttackConfig a = cli.cfg.eval_attack_config(atk_module_wise);
            if (!atk_method.empty()) a.method = attack_method_from_string(atk_method);
            if (!atk_norm.empty()) a.norm = norm_from_string(atk_norm);
            if (!atk_objective.empty()) a.objective = objective_from_string(atk_objective);
            if (atk_eps >= 0.0) {
                if (atk_module_wise)
                    throw ConfigError("attack: --eps applies to the image-only attack");
                a.budgets = {{SiteId::Images, atk_eps}};
            }
            if (atk_steps >= 0) a.steps = atk_steps;
            if (a.method == AttackMethod::fgsm) a.steps = 1;
            if (atk_restarts >= 1) a.restarts = atk_restarts;
            a.validate();
            const int samples = atk_samples > 0 ? atk_samples : cli.cfg.eval_samples;
            std::string row_name = std::string(to_string(a.method)) + "-" + to_string(a.norm);
            if (atk_module_wise) row_name += "-module_wise";
            EvalMatrix mx = evaluate_whitebox(victim, val, {{row_name, a}}, samples, eval_seeds,
                                              cli.threads);
            mx.name = "attack";
            emit_report(cli.run_dir, {mx}, {{"command", "attack"}, {"row", row_name}});
            if (!atk_delta_out.empty()) {
                const int n = std::min(samples, val.size());
                const int chunk = std::min(25, n);
                Tensor obs = make_observation_batch(
                    std::span(val.observations.data(), static_cast<std::size_t>(chunk)));
                TargetBatch targets = make_target_batch(
                    std::span(val.labels.data(), static_cast<std::size_t>(chunk)));
                Rng rng(eval_seed_base, Stream::attack);
                PerturbationSet delta = run_attack(pipeline_from_checkpoint(victim), obs, targets,
                                                   a, rng);
                save_perturbation(atk_delta_out, delta);
            }
            cli.finish_run();
            std::cout << "attack[" << row_name << "]: avg_l2 "
                      << mx.at(row_name, "avg_l2").mean << " (clean "
                      << mx.at("Clean", "avg_l2").mean << ")\n";
        } else if (*ewb) {
            cli.open_run_dir("eval-whitebox");
            Checkpoint victim = load_ckpt(cli, ewb_ckpt);
            Dataset val = load_split(cli, ewb_data, "val");
            const int samples = ewb_samples > 0 ? ewb_samples : cli.cfg.eval_samples;
            EvalMatrix mx = evaluate_whitebox(victim, val, rows_for_eval(cli.cfg, ewb_adaptive),
                                              samples, eval_seeds, cli.threads);
            emit_report(cli.run_dir, {mx}, {{"command", "eval-whitebox"}});
            cli.finish_run();
            for (std::size_t r = 0; r < mx.rows.size(); ++r)
                std::cout << mx.rows[r] << ": avg_l2 " << mx.cells[r][0].mean << " +- "
                          << mx.cells[r][0].stddev << "\n";
        } else if (*ebb) {
            cli.open_run_dir("eval-blackbox");
            Checkpoint victim = load_ckpt(cli, ebb_victim);
            std::vector<Checkpoint> surrogate_ckpts;
            for (const auto& s : ebb_surrogates) surrogate_ckpts.push_back(load_ckpt(cli, s));
            std::vector<std::pair<std::string, const Checkpoint*>> surrogates;
            for (std::size_t i = 0; i < surrogate_ckpts.size(); ++i)
                surrogates.emplace_back("surrogate" + std::to_string(i) + "-" +
                                            surrogate_ckpts[i].method,
                                        &surrogate_ckpts[i]);
            Dataset val = load_split(cli, ebb_data, "val");
            const int samples = ebb_samples > 0 ? ebb_samples : cli.cfg.eval_samples;
            EvalMatrix mx = evaluate_blackbox(victim, surrogates, val, rows_for_eval(cli.cfg, false),
                                              samples, eval_seeds, cli.threads);
            emit_report(cli.run_dir, {mx}, {{"command", "eval-blackbox"}});
            cli.finish_run();
            for (std::size_t r = 0; r < mx.rows.size(); ++r)
                std::cout << mx.rows[r] << ": avg_l2 " << mx.cells[r][0].mean << "\n";
        } else if (*eco) {
            cli.open_run_dir("eval-corruption");
            Checkpoint victim = load_ckpt(cli, eco_ckpt);
            Dataset val = load_split(cli, eco_data, "val");
            const int samples = eco_samples > 0 ? eco_samples : cli.cfg.eval_samples;
            EvalMatrix mx = evaluate_corruption(victim, val, samples, eval_seeds, cli.threads);
            emit_report(cli.run_dir, {mx}, {{"command", "eval-corruption"}});
            cli.finish_run();
            std::cout << "corruption grid mean avg_l2: " << mx.metadata.at("summary_mean_avg_l2")
                      << "\n";
        } else if (*sim) {
            cli.open_run_dir("simulate");
            Checkpoint victim = load_ckpt(cli, sim_ckpt);
            SimConfig sc;
            sc.episode_length = cli.cfg.sim_episode_length;
            sc.n_episodes = cli.cfg.sim_episodes;
            sc.collision_radius = cli.cfg.sim_collision_radius;
            sc.target_distance = cli.cfg.sim_target_distance;
            sc.seed = run_seed;
            sc.world = cli.cfg.dataset;
            sc.attack_eps = cli.cfg.sim_attack_eps;
            if (sim_train_noise) {
                if (sim_data.empty())
                    throw ConfigError("simulate: --train-noise requires --data");
                Dataset train = load_split(cli, sim_data, "train");
                AttackConfig na;
                na.budgets = {{SiteId::Images, cli.cfg.sim_attack_eps}};
                Rng rng(run_seed, Stream::attack);
                Tensor delta = universal_noise(pipeline_from_checkpoint(victim), train, na,
                                               cli.cfg.noise_epochs, cli.cfg.noise_batch, rng);
                PerturbationSet set;
                set.deltas[SiteId::Images] = delta;
                set.budgets[SiteId::Images] = cli.cfg.sim_attack_eps;
                save_perturbation(cli.run_dir / "universal_noise.mwps", set);
                sc.universal_delta = delta;
            } else if (!sim_noise.empty()) {
                cli.note_input(sim_noise);
                PerturbationSet set = load_perturbation(sim_noise);
                auto it = set.deltas.find(SiteId::Images);
                if (it == set.deltas.end())
                    throw ConfigError("simulate: perturbation file has no Images delta");
                sc.universal_delta = it->second;
                sc.attack_eps = set.budgets.count(SiteId::Images) ? set.budgets.at(SiteId::Images)
                                                                  : cli.cfg.sim_attack_eps;
            }
            auto rows = compare_defenses({{victim.method, &victim}}, sc, cli.threads);
            write_defense_table(cli.run_dir / "sim_results.csv", rows);
            write_episode_traces(cli.run_dir / "episode_traces.csv", rows.front().result);
            cli.finish_run();
            for (const auto& row : rows)
                std::cout << row.name << (row.attacked ? " (attacked)" : " (clean)")
                          << ": driving_score " << row.result.driving_score << ", completion "
                          << row.result.completion_rate << ", collisions "
                          << row.result.collision_rate << "\n";
        } else if (*rep) {
            cli.open_run_dir("report");
            nlohmann::ordered_json combined;
            combined["schema_version"] = 1;
            combined["bundles"] = nlohmann::ordered_json::array();
            for (const auto& run : rep_runs) {
                const fs::path bundle = fs::path(run) / "report_bundle.json";
                if (!validate_report_bundle(bundle))
                    throw ContractError("invalid or missing report bundle in '" + run + "'");
                cli.note_input(bundle);
                std::ifstream is(bundle);
                nlohmann::ordered_json j;
                is >> j;
                combined["bundles"].push_back(j);
                for (const auto& m : j["matrices"])
                    std::cout << run << ": matrix '" << m["name"].get<std::string>() << "' ("
                              << m["rows"].size() << " rows)\n";
            }
            std::ofstream os(cli.run_dir / "combined_bundle.json");
            os << combined.dump(2) << "\n";
            cli.finish_run();
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "mwat: error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "mwat: error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
