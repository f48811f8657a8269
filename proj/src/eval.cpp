#include "mwat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "mwat/parallel.hpp"

namespace mwat {

using ordered_json = nlohmann::ordered_json;

const char* to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::contrast: return "contrast";
        case CorruptionKind::frost: return "frost";
        case CorruptionKind::snow: return "snow";
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::shot_noise: return "shot_noise";
        case CorruptionKind::spatter: return "spatter";
    }
    return "?";
}

CorruptionKind corruption_from_string(const std::string& s) {
    for (int i = 0; i < kNumCorruptions; ++i)
        if (s == to_string(static_cast<CorruptionKind>(i))) return static_cast<CorruptionKind>(i);
    throw ContractError("unknown corruption kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// corruptions

Observation apply_corruption(const Observation& obs, const CorruptionSpec& spec) {
    if (spec.severity < 1 || spec.severity > kNumSeverities)
        throw ContractError("corruption severity must be in 1..5");
    const std::size_t s = static_cast<std::size_t>(spec.severity - 1);
    Tensor raster = obs.raster.detached();
    auto d = raster.data();

    // derive the noise stream from the spec seed and the observation content
    std::uint64_t obs_hash = fnv1a64(obs.raster.data().data(),
                                     static_cast<std::size_t>(obs.raster.size()) * sizeof(double));
    obs_hash ^= (static_cast<std::uint64_t>(spec.kind) + 1) * 0x9e3779b97f4a7c15ull;
    obs_hash ^= static_cast<std::uint64_t>(spec.severity) * 0xbf58476d1ce4e5b9ull;
    Rng rng(Rng::derive(spec.seed, obs_hash), Stream::corruption);

    auto clamp01 = [&]() {
        for (auto& v : d) v = std::clamp(v, 0.0, 1.0);
    };

    switch (spec.kind) {
        case CorruptionKind::contrast: {
            static constexpr double c[] = {0.8, 0.6, 0.45, 0.3, 0.2};
            for (auto& v : d) v = 0.5 + c[s] * (v - 0.5);
            clamp01();
            break;
        }
        case CorruptionKind::gaussian_noise: {
            static constexpr double sigma[] = {0.04, 0.08, 0.12, 0.18, 0.26};
            for (auto& v : d) v += rng.normal(0.0, sigma[s]);
            clamp01();
            break;
        }
        case CorruptionKind::shot_noise: {
            static constexpr double lambda[] = {60.0, 25.0, 12.0, 5.0, 3.0};
            for (auto& v : d) v = rng.poisson(lambda[s] * v) / lambda[s];
            clamp01();
            break;
        }
        case CorruptionKind::snow: {
            static constexpr int streaks[] = {2, 4, 6, 8, 12};
            static constexpr int dirs[][2] = {{1, 0}, {1, 1}, {1, -1}};
            for (int k = 0; k < streaks[s]; ++k) {
                int y = static_cast<int>(rng.next_u64() % kGrid);
                int x = static_cast<int>(rng.next_u64() % kGrid);
                const auto& dir = dirs[rng.next_u64() % 3];
                for (int t = 0; t < 4; ++t) {
                    if (y >= 0 && y < kGrid && x >= 0 && x < kGrid)
                        for (int c = 0; c < 4; ++c)
                            d[(static_cast<std::size_t>(c) * kGrid + static_cast<std::size_t>(y)) * kGrid +
                              static_cast<std::size_t>(x)] = 1.0;
                    y += dir[0];
                    x += dir[1];
                }
            }
            break;
        }
        case CorruptionKind::frost: {
            static constexpr double w[] = {0.15, 0.25, 0.35, 0.45, 0.55};
            // low-frequency value noise: a coarse 5x5 grid, bilinearly upsampled
            double coarse[5][5];
            for (auto& row : coarse)
                for (auto& v : row) v = rng.next_double();
            auto texture = [&](int y, int x) {
                const double fy = y / static_cast<double>(kGrid - 1) * 4.0;
                const double fx = x / static_cast<double>(kGrid - 1) * 4.0;
                const int y0 = std::min(3, static_cast<int>(fy));
                const int x0 = std::min(3, static_cast<int>(fx));
                const double ty = fy - y0, tx = fx - x0;
                return coarse[y0][x0] * (1 - ty) * (1 - tx) + coarse[y0 + 1][x0] * ty * (1 - tx) +
                       coarse[y0][x0 + 1] * (1 - ty) * tx + coarse[y0 + 1][x0 + 1] * ty * tx;
            };
            for (int c = 0; c < 4; ++c)
                for (int y = 0; y < kGrid; ++y)
                    for (int x = 0; x < kGrid; ++x) {
                        auto& v = d[(static_cast<std::size_t>(c) * kGrid + static_cast<std::size_t>(y)) * kGrid +
                                    static_cast<std::size_t>(x)];
                        v = (1.0 - w[s]) * v + w[s] * texture(y, x);
                    }
            clamp01();
            break;
        }
        case CorruptionKind::spatter: {
            static constexpr int blobs[] = {2, 4, 6, 10, 14};
            // blobs land on every channel except the obstacles-at-t one
            for (int k = 0; k < blobs[s]; ++k) {
                const int y = static_cast<int>(rng.next_u64() % (kGrid - 1));
                const int x = static_cast<int>(rng.next_u64() % (kGrid - 1));
                for (int c : {0, 1, 3})
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            d[(static_cast<std::size_t>(c) * kGrid + static_cast<std::size_t>(y + dy)) * kGrid +
                              static_cast<std::size_t>(x + dx)] = 1.0;
            }
            break;
        }
    }
    return Observation{std::move(raster)};
}

// ---------------------------------------------------------------------------
// metric plumbing

namespace {

struct SampleMetrics {
    double avg_l2 = 0, iou_map = 0, iou_occ = 0, min_ade = 0, det_err = 0;
    bool has_ade = false, has_det = false;
};

SampleMetrics metrics_from_forward(const ForwardResult& fr, const Labels& lb, int b) {
    SampleMetrics m;
    const auto wp = decode_waypoints(fr.head[static_cast<std::size_t>(ModuleId::Plan)], b);
    m.avg_l2 = metric_avg_l2(wp, lb.expert_waypoints);
    const auto& map_head = fr.head[static_cast<std::size_t>(ModuleId::Map)];
    m.iou_map = metric_iou(std::span(map_head.data().data() + static_cast<std::size_t>(b) * 256, 256),
                           lb.drivable_mask_16);
    const auto& occ_head = fr.head[static_cast<std::size_t>(ModuleId::Occ)];
    m.iou_occ = metric_iou(std::span(occ_head.data().data() + static_cast<std::size_t>(b) * 192, 192),
                           lb.future_occupancy);
    const auto disp = decode_displacements(fr.head[static_cast<std::size_t>(ModuleId::Motion)], b);
    std::tie(m.min_ade, m.has_ade) = metric_min_ade(disp, lb.future_displacements, lb.n_obstacles);
    const auto pos = decode_positions(fr.head[static_cast<std::size_t>(ModuleId::Track)], b);
    std::tie(m.det_err, m.has_det) = metric_det_err(pos, lb.obstacle_positions, lb.n_obstacles);
    return m;
}

EvalCell make_cell(const std::vector<double>& values) {
    EvalCell c;
    c.count = static_cast<int>(values.size());
    if (values.empty()) return c;
    double mean = 0;
    for (double v : values) mean += v;
    mean /= c.count;
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    c.mean = mean;
    c.stddev = std::sqrt(var / c.count);
    return c;
}

std::vector<EvalCell> cells_from_samples(const std::vector<SampleMetrics>& ms) {
    std::vector<double> avg, imap, ade, iocc, det;
    for (const auto& m : ms) {
        avg.push_back(m.avg_l2);
        imap.push_back(m.iou_map);
        iocc.push_back(m.iou_occ);
        if (m.has_ade) ade.push_back(m.min_ade);
        if (m.has_det) det.push_back(m.det_err);
    }
    return {make_cell(avg), make_cell(imap), make_cell(ade), make_cell(iocc), make_cell(det)};
}

constexpr int kEvalChunk = 25;

struct Chunk {
    int start = 0;
    int count = 0;
};

std::vector<Chunk> make_chunks(int n) {
    std::vector<Chunk> out;
    for (int start = 0; start < n; start += kEvalChunk)
        out.push_back({start, std::min(kEvalChunk, n - start)});
    return out;
}

}  // namespace

const EvalCell& EvalMatrix::at(const std::string& row, const std::string& col) const {
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (rows[r] == row)
            for (std::size_t c = 0; c < cols.size(); ++c)
                if (cols[c] == col) return cells[r][c];
    throw ContractError("matrix '" + name + "' has no cell (" + row + ", " + col + ")");
}

std::vector<AttackRow> default_whitebox_attacks(double image_eps, int steps, int restarts) {
    const double l1_eps = image_eps * std::sqrt(static_cast<double>(kGrid * kGrid)) * 1.0;
    const double l2_eps = image_eps * static_cast<double>(kGrid * kGrid);
    std::vector<AttackRow> out;
    AttackConfig fg;
    fg.method = AttackMethod::fgsm;
    fg.steps = 1;
    fg.restarts = restarts;
    fg.budgets = {{SiteId::Images, image_eps}};
    out.push_back({"FGSM", fg});
    AttackConfig mi;
    mi.method = AttackMethod::mifgsm;
    mi.steps = steps;
    mi.restarts = restarts;
    mi.budgets = {{SiteId::Images, image_eps}};
    out.push_back({"MI-FGSM", mi});
    AttackConfig p1;
    p1.method = AttackMethod::pgd;
    p1.norm = Norm::l1;
    p1.steps = steps;
    p1.restarts = restarts;
    p1.budgets = {{SiteId::Images, l1_eps}};
    out.push_back({"PGD-l1", p1});
    AttackConfig p2 = p1;
    p2.norm = Norm::l2;
    p2.budgets = {{SiteId::Images, l2_eps}};
    out.push_back({"PGD-l2", p2});
    AttackConfig pi = p1;
    pi.norm = Norm::linf;
    pi.budgets = {{SiteId::Images, image_eps}};
    out.push_back({"PGD-linf", pi});
    return out;
}

std::vector<AttackRow> adaptive_attacks(int steps, int restarts) {
    AttackConfig base;
    base.method = AttackMethod::pgd;
    base.steps = steps;
    base.restarts = restarts;
    std::vector<AttackRow> out;
    AttackConfig mw = base;
    mw.objective = Objective::total_loss;
    out.push_back({"ModuleWise", mw});
    AttackConfig sl = base;
    sl.objective = Objective::sub_loss;
    out.push_back({"SubLoss", sl});
    AttackConfig pt = base;
    pt.objective = Objective::plan_loss;
    out.push_back({"PlanTargeted", pt});
    return out;
}

// ---------------------------------------------------------------------------
// evaluation drivers

namespace {

// Generates per-sample metrics for one attack row over samples x seeds.
// Chunked; every (seed, chunk) job owns a disjoint slot range.
std::vector<SampleMetrics> attacked_metrics(const Pipeline& model, const Dataset& data,
                                            int n_samples, const AttackRow& row,
                                            std::span<const std::uint64_t> seeds, int threads,
                                            std::uint64_t salt) {
    const auto chunks = make_chunks(n_samples);
    const int per_seed = n_samples;
    std::vector<SampleMetrics> out(static_cast<std::size_t>(per_seed) * seeds.size());
    const int jobs = static_cast<int>(chunks.size() * seeds.size());
    parallel_for(jobs, threads, [&](int job) {
        const std::size_t si = static_cast<std::size_t>(job) / chunks.size();
        const Chunk ch = chunks[static_cast<std::size_t>(job) % chunks.size()];
        Tensor obs = make_observation_batch(
            std::span(data.observations.data() + ch.start, static_cast<std::size_t>(ch.count)));
        TargetBatch targets =
            make_target_batch(std::span(data.labels.data() + ch.start, static_cast<std::size_t>(ch.count)));
        AttackConfig cfg = row.cfg;
        if (cfg.budgets.empty()) cfg.budgets = default_budgets(model);
        Rng rng(Rng::derive(Rng::derive(seeds[si], salt), static_cast<std::uint64_t>(ch.start)),
                Stream::attack);
        PerturbationSet noise = run_attack(model, obs, targets, cfg, rng);
        ForwardResult fr = model.forward_with_noise(obs, &targets, &noise);
        for (int b = 0; b < ch.count; ++b)
            out[si * static_cast<std::size_t>(per_seed) + static_cast<std::size_t>(ch.start + b)] =
                metrics_from_forward(fr, data.labels[static_cast<std::size_t>(ch.start + b)], b);
    });
    return out;
}

std::vector<SampleMetrics> clean_metrics(const Pipeline& model, const Dataset& data, int n_samples,
                                         int threads) {
    const auto chunks = make_chunks(n_samples);
    std::vector<SampleMetrics> out(static_cast<std::size_t>(n_samples));
    parallel_for(static_cast<int>(chunks.size()), threads, [&](int ci) {
        const Chunk ch = chunks[static_cast<std::size_t>(ci)];
        Tensor obs = make_observation_batch(
            std::span(data.observations.data() + ch.start, static_cast<std::size_t>(ch.count)));
        TargetBatch targets =
            make_target_batch(std::span(data.labels.data() + ch.start, static_cast<std::size_t>(ch.count)));
        ForwardResult fr = model.forward(obs, targets);
        for (int b = 0; b < ch.count; ++b)
            out[static_cast<std::size_t>(ch.start + b)] =
                metrics_from_forward(fr, data.labels[static_cast<std::size_t>(ch.start + b)], b);
    });
    return out;
}

double mean_avg_l2(const std::vector<SampleMetrics>& ms) {
    double acc = 0;
    for (const auto& m : ms) acc += m.avg_l2;
    return ms.empty() ? 0.0 : acc / static_cast<double>(ms.size());
}

void check_samples(const Dataset& data, int& n_samples) {
    if (data.size() == 0) throw ContractError("evaluation dataset is empty");
    n_samples = std::min(n_samples, data.size());
}

std::string seeds_string(std::span<const std::uint64_t> seeds) {
    std::string s;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(seeds[i]);
    }
    return s;
}

}  // namespace

EvalMatrix evaluate_whitebox(const Checkpoint& victim, const Dataset& data,
                             const std::vector<AttackRow>& attacks, int n_samples,
                             std::span<const std::uint64_t> seeds, int threads) {
    int n = n_samples;
    check_samples(data, n);
    if (seeds.empty()) throw ContractError("evaluate_whitebox: at least one seed required");
    Pipeline model = pipeline_from_checkpoint(victim);

    EvalMatrix mx;
    mx.name = "whitebox";
    mx.cols = kMetricColumns;
    mx.rows.push_back("Clean");
    mx.cells.push_back(cells_from_samples(clean_metrics(model, data, n, threads)));
    std::uint64_t salt = 1;
    for (const auto& row : attacks) {
        mx.rows.push_back(row.name);
        mx.cells.push_back(cells_from_samples(
            attacked_metrics(model, data, n, row, seeds, threads, salt++)));
    }
    mx.metadata["victim"] = hex64(victim.content_hash());
    mx.metadata["victim_method"] = victim.method;
    mx.metadata["dataset"] = data.split + "/" + std::to_string(data.size());
    mx.metadata["n_samples"] = std::to_string(n);
    mx.metadata["seeds"] = seeds_string(seeds);
    if (!attacks.empty()) mx.metadata["restarts"] = std::to_string(attacks.front().cfg.restarts);
    return mx;
}

EvalMatrix evaluate_blackbox(const Checkpoint& victim,
                             const std::vector<std::pair<std::string, const Checkpoint*>>& surrogates,
                             const Dataset& data, const std::vector<AttackRow>& attacks,
                             int n_samples, std::span<const std::uint64_t> seeds, int threads) {
    int n = n_samples;
    check_samples(data, n);
    for (const auto& row : attacks)
        for (const auto& [id, eps] : row.cfg.budgets)
            if (id != SiteId::Images)
                throw ContractError("evaluate_blackbox: attacks must be Images-only");

    Pipeline victim_model = pipeline_from_checkpoint(victim);
    EvalMatrix mx;
    mx.name = "blackbox";
    mx.cols = kMetricColumns;
    const auto clean = clean_metrics(victim_model, data, n, threads);
    mx.rows.push_back("Clean");
    mx.cells.push_back(cells_from_samples(clean));
    const double clean_l2 = mean_avg_l2(clean);

    std::uint64_t salt = 100;
    for (const auto& [surrogate_name, surrogate_ckpt] : surrogates) {
        Pipeline surrogate = pipeline_from_checkpoint(*surrogate_ckpt);
        // transfer every candidate attack, keep the most damaging one
        std::vector<SampleMetrics> best;
        std::string best_name;
        double best_l2 = -1.0;
        for (const auto& row : attacks) {
            const auto chunks = make_chunks(n);
            std::vector<SampleMetrics> ms(static_cast<std::size_t>(n) * seeds.size());
            const int jobs = static_cast<int>(chunks.size() * seeds.size());
            const std::uint64_t row_salt = salt++;
            parallel_for(jobs, threads, [&](int job) {
                const std::size_t si = static_cast<std::size_t>(job) / chunks.size();
                const Chunk ch = chunks[static_cast<std::size_t>(job) % chunks.size()];
                Tensor obs = make_observation_batch(std::span(data.observations.data() + ch.start,
                                                              static_cast<std::size_t>(ch.count)));
                TargetBatch targets = make_target_batch(
                    std::span(data.labels.data() + ch.start, static_cast<std::size_t>(ch.count)));
                Rng rng(Rng::derive(Rng::derive(seeds[si], row_salt),
                                    static_cast<std::uint64_t>(ch.start)),
                        Stream::attack);
                PerturbationSet delta = run_attack(surrogate, obs, targets, row.cfg, rng);
                ForwardResult fr = victim_model.forward_with_noise(obs, &targets, &delta);
                for (int b = 0; b < ch.count; ++b)
                    ms[si * static_cast<std::size_t>(n) + static_cast<std::size_t>(ch.start + b)] =
                        metrics_from_forward(fr, data.labels[static_cast<std::size_t>(ch.start + b)], b);
            });
            const double l2 = mean_avg_l2(ms);
            if (l2 > best_l2) {
                best_l2 = l2;
                best = std::move(ms);
                best_name = row.name;
            }
        }
        mx.rows.push_back(surrogate_name);
        mx.cells.push_back(cells_from_samples(best));
        mx.metadata["strongest_attack/" + surrogate_name] = best_name;
    }
    mx.metadata["victim"] = hex64(victim.content_hash());
    mx.metadata["victim_method"] = victim.method;
    mx.metadata["clean_avg_l2"] = std::to_string(clean_l2);
    mx.metadata["n_samples"] = std::to_string(n);
    mx.metadata["seeds"] = seeds_string(seeds);
    return mx;
}

EvalMatrix evaluate_corruption(const Checkpoint& victim, const Dataset& data, int n_samples,
                               std::span<const std::uint64_t> seeds, int threads) {
    int n = n_samples;
    check_samples(data, n);
    Pipeline model = pipeline_from_checkpoint(victim);

    EvalMatrix mx;
    mx.name = "corruption";
    mx.cols = kMetricColumns;
    mx.rows.push_back("Clean");
    mx.cells.push_back(cells_from_samples(clean_metrics(model, data, n, threads)));

    double grid_l2_sum = 0.0;
    int grid_cells = 0;
    for (int k = 0; k < kNumCorruptions; ++k)
        for (int sev = 1; sev <= kNumSeverities; ++sev) {
            const auto kind = static_cast<CorruptionKind>(k);
            std::vector<SampleMetrics> ms(static_cast<std::size_t>(n) * seeds.size());
            const auto chunks = make_chunks(n);
            const int jobs = static_cast<int>(chunks.size() * seeds.size());
            parallel_for(jobs, threads, [&](int job) {
                const std::size_t si = static_cast<std::size_t>(job) / chunks.size();
                const Chunk ch = chunks[static_cast<std::size_t>(job) % chunks.size()];
                std::vector<Observation> obs;
                obs.reserve(static_cast<std::size_t>(ch.count));
                for (int b = 0; b < ch.count; ++b)
                    obs.push_back(apply_corruption(
                        data.observations[static_cast<std::size_t>(ch.start + b)],
                        CorruptionSpec{kind, sev, seeds[si]}));
                Tensor batch = make_observation_batch(obs);
                TargetBatch targets = make_target_batch(
                    std::span(data.labels.data() + ch.start, static_cast<std::size_t>(ch.count)));
                ForwardResult fr = model.forward(batch, targets);
                for (int b = 0; b < ch.count; ++b)
                    ms[si * static_cast<std::size_t>(n) + static_cast<std::size_t>(ch.start + b)] =
                        metrics_from_forward(fr, data.labels[static_cast<std::size_t>(ch.start + b)], b);
            });
            mx.rows.push_back(std::string(to_string(kind)) + "-s" + std::to_string(sev));
            mx.cells.push_back(cells_from_samples(ms));
            grid_l2_sum += mx.cells.back()[0].mean;
            ++grid_cells;
        }
    mx.metadata["victim"] = hex64(victim.content_hash());
    mx.metadata["victim_method"] = victim.method;
    mx.metadata["summary_mean_avg_l2"] = std::to_string(grid_l2_sum / grid_cells);
    mx.metadata["n_samples"] = std::to_string(n);
    mx.metadata["seeds"] = seeds_string(seeds);
    return mx;
}

double mean_plan_error(const Checkpoint& victim, const Dataset& data, int n_samples,
                       const AttackConfig* attack, std::uint64_t attack_seed, int threads) {
    int n = n_samples;
    check_samples(data, n);
    Pipeline model = pipeline_from_checkpoint(victim);
    if (!attack) return mean_avg_l2(clean_metrics(model, data, n, threads));
    AttackRow row{"attack", *attack};
    const std::uint64_t seeds[] = {attack_seed};
    return mean_avg_l2(attacked_metrics(model, data, n, row, seeds, threads, 7));
}

// ---------------------------------------------------------------------------
// report emission

namespace {

ordered_json matrix_to_json(const EvalMatrix& mx) {
    ordered_json j;
    j["name"] = mx.name;
    j["rows"] = mx.rows;
    j["cols"] = mx.cols;
    ordered_json mean = ordered_json::array(), stddev = ordered_json::array(),
                 count = ordered_json::array();
    for (const auto& row : mx.cells) {
        ordered_json rm = ordered_json::array(), rs = ordered_json::array(),
                     rc = ordered_json::array();
        for (const auto& c : row) {
            rm.push_back(c.mean);
            rs.push_back(c.stddev);
            rc.push_back(c.count);
        }
        mean.push_back(rm);
        stddev.push_back(rs);
        count.push_back(rc);
    }
    j["mean"] = mean;
    j["stddev"] = stddev;
    j["count"] = count;
    j["metadata"] = mx.metadata;
    return j;
}

}  // namespace

void emit_report(const std::filesystem::path& dir, const std::vector<EvalMatrix>& matrices,
                 const std::map<std::string, std::string>& metadata) {
    std::filesystem::create_directories(dir);
    for (const auto& mx : matrices) {
        std::ofstream os(dir / (mx.name + ".csv"));
        if (!os) throw IoError("cannot write matrix csv for '" + mx.name + "'");
        os.precision(17);
        os << "row";
        for (const auto& c : mx.cols) os << "," << c << "_mean," << c << "_std," << c << "_n";
        os << "\n";
        for (std::size_t r = 0; r < mx.rows.size(); ++r) {
            os << mx.rows[r];
            for (const auto& cell : mx.cells[r])
                os << "," << cell.mean << "," << cell.stddev << "," << cell.count;
            os << "\n";
        }
    }
    ordered_json bundle;
    bundle["schema_version"] = 1;
    ordered_json ms = ordered_json::array();
    for (const auto& mx : matrices) ms.push_back(matrix_to_json(mx));
    bundle["matrices"] = ms;
    bundle["metadata"] = metadata;
    std::ofstream os(dir / "report_bundle.json");
    if (!os) throw IoError("cannot write report bundle");
    os << bundle.dump(2) << "\n";
}

bool validate_report_bundle(const std::filesystem::path& bundle_json) {
    std::ifstream is(bundle_json);
    if (!is) return false;
    ordered_json j;
    try {
        is >> j;
    } catch (...) {
        return false;
    }
    if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer())
        return false;
    if (j["schema_version"].get<int>() != 1) return false;
    if (!j.contains("matrices") || !j["matrices"].is_array()) return false;
    if (!j.contains("metadata") || !j["metadata"].is_object()) return false;
    for (const auto& m : j["matrices"]) {
        for (const char* key : {"name", "rows", "cols", "mean", "stddev", "count", "metadata"})
            if (!m.contains(key)) return false;
        const auto rows = m["rows"].size();
        const auto cols = m["cols"].size();
        for (const char* key : {"mean", "stddev", "count"}) {
            if (m[key].size() != rows) return false;
            for (const auto& row : m[key]) {
                if (row.size() != cols) return false;
                for (const auto& v : row)
                    if (!v.is_number()) return false;
            }
        }
    }
    return true;
}

}  // namespace mwat
