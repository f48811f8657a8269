#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mwat/eval.hpp"

using namespace mwat;

namespace {

struct EvalFixture {
    Dataset train, val;
    Checkpoint vanilla;

    EvalFixture() {
        DatasetConfig cfg;
        cfg.seed = 51;
        cfg.n_scenarios = 120;
        auto [tr, va] = build_dataset(cfg);
        train = std::move(tr);
        val = std::move(va);
        TrainConfig tc;
        tc.method = TrainMethod::clean;
        tc.epochs = 10;
        tc.learning_rate = 1e-3;
        tc.seed = 3;
        vanilla = pretrain_clean(train, tc).checkpoint;
    }
};

EvalFixture& fixture() {
    static EvalFixture fx;
    return fx;
}

double mean_abs_diff(const Observation& a, const Observation& b) {
    double acc = 0.0;
    for (int i = 0; i < a.raster.size(); ++i) acc += std::abs(a.raster[i] - b.raster[i]);
    return acc / a.raster.size();
}

}  // namespace

TEST_CASE("corruptions: range, determinism, severity monotonicity") {
    auto& fx = fixture();
    for (int k = 0; k < kNumCorruptions; ++k) {
        const auto kind = static_cast<CorruptionKind>(k);
        double prev_mean = -1.0;
        for (int sev = 1; sev <= kNumSeverities; ++sev) {
            double acc = 0.0;
            const int n = std::min(100, fx.train.size());
            for (int i = 0; i < n; ++i) {
                const Observation& clean = fx.train.observations[static_cast<std::size_t>(i)];
                CorruptionSpec spec{kind, sev, 9};
                Observation c1 = apply_corruption(clean, spec);
                Observation c2 = apply_corruption(clean, spec);
                CHECK(c1.raster.checksum() == c2.raster.checksum());  // deterministic per (spec, obs)
                for (int j = 0; j < c1.raster.size(); ++j) {
                    CHECK(c1.raster[j] >= 0.0);
                    CHECK(c1.raster[j] <= 1.0);
                }
                acc += mean_abs_diff(c1, clean);
            }
            const double mean = acc / std::min(100, fx.train.size());
            INFO("kind ", to_string(kind), " severity ", sev);
            CHECK(mean >= prev_mean - 1e-9);
            prev_mean = mean;
        }
    }
}

TEST_CASE("contrast with c=1 is the identity map") {
    // the formula 0.5 + c*(x-0.5) fixes every x at c=1
    for (double x : {0.0, 0.25, 0.5, 1.0}) CHECK(0.5 + 1.0 * (x - 0.5) == doctest::Approx(x));
}

TEST_CASE("severity out of range is rejected") {
    auto& fx = fixture();
    CHECK_THROWS_AS(
        apply_corruption(fx.train.observations[0], CorruptionSpec{CorruptionKind::snow, 0, 1}),
        ContractError);
    CHECK_THROWS_AS(
        apply_corruption(fx.train.observations[0], CorruptionSpec{CorruptionKind::snow, 6, 1}),
        ContractError);
}

TEST_CASE("whitebox matrix: clean row matches direct evaluation, attacks do not improve it") {
    auto& fx = fixture();
    auto rows = default_whitebox_attacks(0.2, 3, 2);
    const std::uint64_t seeds[] = {1};
    EvalMatrix mx = evaluate_whitebox(fx.vanilla, fx.val, rows, 24, seeds, 2);
    REQUIRE(mx.rows.size() == rows.size() + 1);
    CHECK(mx.rows.front() == "Clean");

    const double direct = mean_plan_error(fx.vanilla, fx.val, 24);
    CHECK(mx.at("Clean", "avg_l2").mean == doctest::Approx(direct));

    for (const auto& row : rows) {
        INFO("attack ", row.name);
        CHECK(mx.at(row.name, "avg_l2").mean >= mx.at("Clean", "avg_l2").mean);
    }
    // every cell finite
    for (const auto& row : mx.cells)
        for (const auto& cell : row) {
            CHECK(std::isfinite(cell.mean));
            CHECK(std::isfinite(cell.stddev));
        }
    // thread count does not change results
    EvalMatrix mx1 = evaluate_whitebox(fx.vanilla, fx.val, rows, 24, seeds, 1);
    for (std::size_t r = 0; r < mx.rows.size(); ++r)
        for (std::size_t c = 0; c < mx.cols.size(); ++c)
            CHECK(mx.cells[r][c].mean == mx1.cells[r][c].mean);
}

TEST_CASE("blackbox: self-transfer of a deterministic attack equals white-box") {
    auto& fx = fixture();
    std::vector<AttackRow> fgsm_only;
    AttackConfig fg;
    fg.method = AttackMethod::fgsm;
    fg.steps = 1;
    fg.budgets = {{SiteId::Images, 0.2}};
    fgsm_only.push_back({"FGSM", fg});
    const std::uint64_t seeds[] = {1};

    EvalMatrix wb = evaluate_whitebox(fx.vanilla, fx.val, fgsm_only, 16, seeds, 1);
    std::vector<std::pair<std::string, const Checkpoint*>> surrogates{{"self", &fx.vanilla}};
    EvalMatrix bb = evaluate_blackbox(fx.vanilla, surrogates, fx.val, fgsm_only, 16, seeds, 1);
    CHECK(bb.at("self", "avg_l2").mean == doctest::Approx(wb.at("FGSM", "avg_l2").mean));
    CHECK(bb.metadata.at("strongest_attack/self") == "FGSM");
}

TEST_CASE("blackbox: reported row is the strongest candidate") {
    auto& fx = fixture();
    // two deterministic candidates so each run reproduces exactly
    std::vector<AttackRow> candidates;
    AttackConfig weak;
    weak.method = AttackMethod::fgsm;
    weak.steps = 1;
    weak.budgets = {{SiteId::Images, 0.05}};
    candidates.push_back({"weak", weak});
    AttackConfig strong;
    strong.method = AttackMethod::mifgsm;
    strong.steps = 3;
    strong.budgets = {{SiteId::Images, 0.3}};
    candidates.push_back({"strong", strong});
    const std::uint64_t seeds[] = {1};

    std::vector<std::pair<std::string, const Checkpoint*>> surrogates{{"self", &fx.vanilla}};
    EvalMatrix joint = evaluate_blackbox(fx.vanilla, surrogates, fx.val, candidates, 16, seeds, 1);
    double best_single = -1.0;
    for (const auto& cand : candidates) {
        EvalMatrix single = evaluate_blackbox(fx.vanilla, surrogates, fx.val, {cand}, 16, seeds, 1);
        best_single = std::max(best_single, single.at("self", "avg_l2").mean);
    }
    CHECK(joint.at("self", "avg_l2").mean == doctest::Approx(best_single));
}

TEST_CASE("blackbox rejects non-image attacks") {
    auto& fx = fixture();
    AttackConfig bad;
    bad.budgets = {{SiteId::MotionPlan, 0.1}};
    const std::uint64_t seeds[] = {1};
    std::vector<std::pair<std::string, const Checkpoint*>> surrogates{{"self", &fx.vanilla}};
    CHECK_THROWS_AS(
        evaluate_blackbox(fx.vanilla, surrogates, fx.val, {{"bad", bad}}, 8, seeds, 1),
        ContractError);
}

TEST_CASE("corruption matrix: 6x5 grid plus the clean row; severity-0 equals clean eval") {
    auto& fx = fixture();
    const std::uint64_t seeds[] = {1};
    EvalMatrix mx = evaluate_corruption(fx.vanilla, fx.val, 12, seeds, 2);
    int grid_rows = 0;
    for (const auto& r : mx.rows) grid_rows += (r != "Clean");
    CHECK(grid_rows == kNumCorruptions * kNumSeverities);
    CHECK(mx.rows.front() == "Clean");
    CHECK(mx.at("Clean", "avg_l2").mean ==
          doctest::Approx(mean_plan_error(fx.vanilla, fx.val, 12)));
    CHECK(mx.metadata.count("summary_mean_avg_l2") == 1);
}

TEST_CASE("report emission: schema round-trip, shapes, and byte determinism") {
    auto& fx = fixture();
    auto rows = default_whitebox_attacks(0.2, 1, 1);
    rows.resize(1);
    const std::uint64_t seeds[] = {1};
    EvalMatrix mx = evaluate_whitebox(fx.vanilla, fx.val, rows, 8, seeds, 1);

    namespace fs = std::filesystem;
    const fs::path dir1 = fs::temp_directory_path() / "mwat_report_a";
    const fs::path dir2 = fs::temp_directory_path() / "mwat_report_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    const std::map<std::string, std::string> meta{{"purpose", "test"}};
    emit_report(dir1, {mx}, meta);
    emit_report(dir2, {mx}, meta);

    CHECK(validate_report_bundle(dir1 / "report_bundle.json"));
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir1 / "report_bundle.json") == slurp(dir2 / "report_bundle.json"));
    CHECK(slurp(dir1 / "whitebox.csv") == slurp(dir2 / "whitebox.csv"));

    // csv row/column counts match the matrix
    std::ifstream is(dir1 / "whitebox.csv");
    std::string line;
    int lines = 0, header_cols = 0;
    while (std::getline(is, line)) {
        if (lines == 0) {
            header_cols = 1;
            for (char c : line) header_cols += (c == ',');
        }
        ++lines;
    }
    CHECK(lines == static_cast<int>(mx.rows.size()) + 1);
    CHECK(header_cols == static_cast<int>(mx.cols.size()) * 3 + 1);

    // a corrupted bundle fails validation
    {
        std::ofstream os(dir2 / "report_bundle.json");
        os << "{\"schema_version\": 2}";
    }
    CHECK(!validate_report_bundle(dir2 / "report_bundle.json"));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("evaluation does not mutate the checkpoint") {
    auto& fx = fixture();
    const std::uint64_t before = fx.vanilla.content_hash();
    auto rows = default_whitebox_attacks(0.2, 1, 1);
    rows.resize(2);
    const std::uint64_t seeds[] = {1};
    evaluate_whitebox(fx.vanilla, fx.val, rows, 8, seeds, 2);
    evaluate_corruption(fx.vanilla, fx.val, 8, seeds, 2);
    CHECK(fx.vanilla.content_hash() == before);
}
