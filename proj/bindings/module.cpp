#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mwat/attacks.hpp"
#include "mwat/config.hpp"
#include "mwat/dwaa.hpp"
#include "mwat/eval.hpp"
#include "mwat/sim.hpp"
#include "mwat/trainer.hpp"

namespace py = pybind11;
using namespace mwat;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(shape, std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

AttackConfig attack_config_from_kwargs(const std::string& method, const std::string& norm,
                                       const std::string& objective, double eps, int steps,
                                       int restarts, bool module_wise) {
    AttackConfig a;
    a.method = attack_method_from_string(method);
    a.norm = norm_from_string(norm);
    a.objective = objective_from_string(objective);
    a.steps = a.method == AttackMethod::fgsm ? 1 : steps;
    a.restarts = restarts;
    if (module_wise) {
        a.budgets = {{SiteId::Images, 0.8},   {SiteId::TrackMotion, 0.1}, {SiteId::MapMotion, 0.1},
                     {SiteId::MotionOcc, 0.1}, {SiteId::MotionPlan, 0.1}};
        if (eps > 0.0) a.budgets[SiteId::Images] = eps;
    } else {
        a.budgets = {{SiteId::Images, eps}};
    }
    return a;
}

py::dict matrix_to_dict(const EvalMatrix& mx) {
    py::dict out;
    out["name"] = mx.name;
    out["rows"] = mx.rows;
    out["cols"] = mx.cols;
    py::dict cells;
    for (std::size_t r = 0; r < mx.rows.size(); ++r) {
        py::dict row;
        for (std::size_t c = 0; c < mx.cols.size(); ++c) {
            py::dict cell;
            cell["mean"] = mx.cells[r][c].mean;
            cell["std"] = mx.cells[r][c].stddev;
            cell["n"] = mx.cells[r][c].count;
            row[py::str(mx.cols[c])] = cell;
        }
        cells[py::str(mx.rows[r])] = row;
    }
    out["cells"] = cells;
    out["metadata"] = mx.metadata;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "module-wise adversarial training toolkit (C++ core)";

    py::register_exception<DimensionError>(m, "DimensionError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<ContractError>(m, "ContractError");

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("size", &Dataset::size)
        .def_property_readonly("split", [](const Dataset& d) { return d.split; })
        .def("observation",
             [](const Dataset& d, int i) {
                 return array_from_tensor(d.observations.at(static_cast<std::size_t>(i)).raster);
             })
        .def("expert_waypoints", [](const Dataset& d, int i) {
            const auto& wp = d.labels.at(static_cast<std::size_t>(i)).expert_waypoints;
            return std::vector<double>(wp.begin(), wp.end());
        });

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_property_readonly("method", [](const Checkpoint& c) { return c.method; })
        .def_property_readonly("epoch", [](const Checkpoint& c) { return c.epoch; })
        .def_property_readonly("seed", [](const Checkpoint& c) { return c.seed; })
        .def("content_hash", [](const Checkpoint& c) { return hex64(c.content_hash()); });

    m.def(
        "generate_dataset",
        [](std::uint64_t seed, int n_scenarios, double split_fraction) {
            DatasetConfig cfg;
            cfg.seed = seed;
            cfg.n_scenarios = n_scenarios;
            cfg.split_fraction = split_fraction;
            auto [train, val] = build_dataset(cfg);
            return py::make_tuple(std::move(train), std::move(val));
        },
        py::arg("seed"), py::arg("n_scenarios"), py::arg("split_fraction") = 0.8);
    m.def("save_dataset",
          [](const std::string& path, const Dataset& ds) { save_dataset(path, ds); });
    m.def("load_dataset", [](const std::string& path) { return load_dataset(path); });

    m.def(
        "pretrain",
        [](const Dataset& train, int epochs, double lr, std::uint64_t seed) {
            TrainConfig cfg;
            cfg.method = TrainMethod::clean;
            cfg.epochs = epochs;
            cfg.learning_rate = lr;
            cfg.seed = seed;
            return pretrain_clean(train, cfg).checkpoint;
        },
        py::arg("train"), py::arg("epochs") = 20, py::arg("lr") = 1e-3, py::arg("seed") = 0);

    m.def(
        "finetune",
        [](const Checkpoint& pre, const Dataset& train, const std::string& method, int epochs,
           double lr, int attack_steps, bool dwaa, std::uint64_t seed) {
            TrainConfig cfg;
            cfg.method = train_method_from_string(method);
            cfg.epochs = epochs;
            cfg.learning_rate = lr;
            cfg.attack_steps = cfg.method == TrainMethod::fat ? 1 : attack_steps;
            cfg.dwaa_enabled = dwaa && cfg.method == TrainMethod::ma2t;
            cfg.seed = seed;
            return finetune(pre, train, cfg).checkpoint;
        },
        py::arg("pretrained"), py::arg("train"), py::arg("method") = "ma2t", py::arg("epochs") = 3,
        py::arg("lr") = 1e-4, py::arg("attack_steps") = 5, py::arg("dwaa") = true,
        py::arg("seed") = 0);

    m.def("save_checkpoint",
          [](const std::string& path, const Checkpoint& c) { save_checkpoint(path, c); });
    m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path); });
    m.def("evaluate_loss", [](const Checkpoint& c, const Dataset& data) {
        Pipeline model = pipeline_from_checkpoint(c);
        return evaluate_loss(model, data);
    });

    m.def(
        "mean_plan_error",
        [](const Checkpoint& victim, const Dataset& data, int samples, py::object attack,
           std::uint64_t attack_seed, int threads) {
            if (attack.is_none()) return mean_plan_error(victim, data, samples, nullptr, 0, threads);
            const AttackConfig cfg = attack.cast<AttackConfig>();
            return mean_plan_error(victim, data, samples, &cfg, attack_seed, threads);
        },
        py::arg("victim"), py::arg("data"), py::arg("samples") = 100,
        py::arg("attack") = py::none(), py::arg("attack_seed") = 1, py::arg("threads") = 1);

    py::class_<AttackConfig>(m, "AttackConfig");
    m.def("attack_config", &attack_config_from_kwargs, py::arg("method") = "pgd",
          py::arg("norm") = "linf", py::arg("objective") = "total_loss", py::arg("eps") = 0.2,
          py::arg("steps") = 5, py::arg("restarts") = 5, py::arg("module_wise") = false);

    m.def(
        "evaluate_whitebox",
        [](const Checkpoint& victim, const Dataset& data, int samples,
           const std::vector<std::uint64_t>& seeds, int threads, bool adaptive) {
            auto rows = default_whitebox_attacks();
            if (adaptive)
                for (auto& row : adaptive_attacks()) rows.push_back(row);
            return matrix_to_dict(evaluate_whitebox(victim, data, rows, samples, seeds, threads));
        },
        py::arg("victim"), py::arg("data"), py::arg("samples") = 50,
        py::arg("seeds") = std::vector<std::uint64_t>{1}, py::arg("threads") = 1,
        py::arg("adaptive") = false);

    m.def(
        "project",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
           const std::string& norm, double eps) {
            return array_from_tensor(project(tensor_from_array(arr), norm_from_string(norm), eps));
        },
        py::arg("delta"), py::arg("norm"), py::arg("eps"));

    m.def(
        "seeded_random",
        [](std::uint64_t seed, const std::vector<int>& shape, const std::string& dist, double p1,
           double p2) {
            const Dist d = dist == "uniform" ? Dist::uniform : Dist::normal;
            return array_from_tensor(seeded_random(seed, shape, d, p1, p2));
        },
        py::arg("seed"), py::arg("shape"), py::arg("dist") = "uniform", py::arg("p1") = 0.0,
        py::arg("p2") = 1.0);

    m.def(
        "apply_corruption",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& raster,
           const std::string& kind, int severity, std::uint64_t seed) {
            Observation obs{tensor_from_array(raster)};
            return array_from_tensor(
                apply_corruption(obs, CorruptionSpec{corruption_from_string(kind), severity, seed})
                    .raster);
        },
        py::arg("raster"), py::arg("kind"), py::arg("severity"), py::arg("seed") = 0);

    py::class_<DwaaState>(m, "DwaaState")
        .def(py::init<double, int>(), py::arg("r") = 0.2, py::arg("update_period") = 100)
        .def("step_window",
             [](DwaaState& st, const std::vector<double>& means) {
                 if (means.size() != kNumModules)
                     throw ContractError("step_window expects 5 values");
                 std::array<double, kNumModules> a{};
                 std::copy(means.begin(), means.end(), a.begin());
                 return st.step_window(a);
             })
        .def("current_weights", [](const DwaaState& st) {
            const auto& w = st.current_weights();
            return std::vector<double>(w.begin(), w.end());
        });

    m.def(
        "run_closed_loop",
        [](const Checkpoint& victim, int episodes, int episode_length, std::uint64_t seed,
           py::object universal_delta, int threads) {
            SimConfig cfg;
            cfg.n_episodes = episodes;
            cfg.episode_length = episode_length;
            cfg.seed = seed;
            if (!universal_delta.is_none())
                cfg.universal_delta = tensor_from_array(
                    universal_delta
                        .cast<py::array_t<double, py::array::c_style | py::array::forcecast>>());
            SimResult r = run_closed_loop(victim, cfg, threads);
            py::dict out;
            out["driving_score"] = r.driving_score;
            out["completion_rate"] = r.completion_rate;
            out["collision_rate"] = r.collision_rate;
            return out;
        },
        py::arg("victim"), py::arg("episodes") = 20, py::arg("episode_length") = 40,
        py::arg("seed") = 0, py::arg("universal_delta") = py::none(), py::arg("threads") = 1);

    m.def(
        "universal_noise",
        [](const Checkpoint& victim, const Dataset& data, double eps, int epochs, int batch,
           std::uint64_t seed) {
            Pipeline model = pipeline_from_checkpoint(victim);
            AttackConfig cfg;
            cfg.budgets = {{SiteId::Images, eps}};
            Rng rng(seed, Stream::attack);
            return array_from_tensor(universal_noise(model, data, cfg, epochs, batch, rng));
        },
        py::arg("victim"), py::arg("data"), py::arg("eps") = 0.2, py::arg("epochs") = 3,
        py::arg("batch") = 32, py::arg("seed") = 0);

    m.attr("__version__") = "0.1.0";
}
