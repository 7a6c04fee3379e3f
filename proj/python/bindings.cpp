#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "thermoforge/composer.hpp"
#include "thermoforge/config_graph.hpp"
#include "thermoforge/knowledge.hpp"
#include "thermoforge/oloc.hpp"
#include "thermoforge/physics.hpp"
#include "thermoforge/study.hpp"
#include "thermoforge/system_spec.hpp"

namespace py = pybind11;
using namespace thermoforge;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
ThermalParams params_of(const std::string& params_json) {
    return params_json.empty() ? ThermalParams{} : params_from_json(nlohmann::json::parse(params_json));
}

SolveOptions options_of(const std::string& options_json) {
    return options_json.empty() ? SolveOptions{} : solve_options_from_json(nlohmann::json::parse(options_json));
}

}  // namespace

PYBIND11_MODULE(_thermoforge, m) {
    m.doc() = "Native core of thermoforge";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<StructureError>(m, "StructureError", PyExc_ValueError);
    py::register_exception<RangeError>(m, "RangeError", PyExc_IndexError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<ConfigGraph>(m, "ConfigGraph")
        .def(py::init<std::vector<int>>(), py::arg("parents"))
        .def_property_readonly("parents", &ConfigGraph::parents)
        .def("size", &ConfigGraph::size)
        .def("children", &ConfigGraph::children)
        .def("canonical_string", &ConfigGraph::canonical_string)
        .def("independent_flow_count", [](const ConfigGraph& g) { return independent_flow_count(g); })
        .def("to_json", [](const ConfigGraph& g) { return to_json(g).dump(); })
        .def("__eq__", [](const ConfigGraph& a, const ConfigGraph& b) { return a == b; })
        .def("__repr__", [](const ConfigGraph& g) { return "ConfigGraph('" + g.canonical_string() + "')"; });

    m.def("enumerate_single_split", &enumerate_single_split, py::arg("n"));
    m.def("enumerate_multi_split", &enumerate_multi_split, py::arg("n"), py::arg("max_depth"));
    m.def("enumerate_all", &enumerate_all, py::arg("n"), py::arg("max_depth"));
    m.def("config_list_hash", &config_list_hash);

    m.def("composite_config_count", [](const std::string& system_json) {
        return composite_config_count(system_from_json(nlohmann::json::parse(system_json)));
    });

    m.def(
        "simulate_endurance",
        [](const ConfigGraph& g, const std::vector<double>& loads, double t_max, double dt,
           const std::string& params_json) -> py::object {
            const PhysicsGraph pg(g, params_of(params_json));
            const auto e = simulate_endurance(pg, loads, constant_policy(pg.equal_split_flows()), t_max, dt);
            return e ? py::object(py::float_(*e)) : py::none();
        },
        py::arg("config"), py::arg("loads"), py::arg("t_max") = 500.0, py::arg("dt") = 0.02,
        py::arg("params_json") = "");

    m.def(
        "solve",
        [](const ConfigGraph& g, const std::vector<double>& loads, const std::string& options_json,
           const std::string& params_json) {
            const PhysicsGraph pg(g, params_of(params_json));
            const SolveOptions opt = options_of(options_json);
            py::gil_scoped_release release;
            return to_json(solve(pg, loads, opt)).dump();
        },
        py::arg("config"), py::arg("loads"), py::arg("options_json") = "", py::arg("params_json") = "");

    m.def("lhs_sample", [](int n_pop, int n_dims, double lo, double hi, std::uint64_t seed) {
        const Eigen::MatrixXd X = lhs_sample(n_pop, n_dims, lo, hi, seed);
        std::vector<std::vector<double>> rows(X.rows(), std::vector<double>(X.cols()));
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            for (Eigen::Index j = 0; j < X.cols(); ++j) rows[i][j] = X(i, j);
        return rows;
    });

    m.def(
        "run_study",
        [](const std::string& spec_json, const std::string& csv_path, int workers) {
            const StudySpec spec = study_spec_from_json(nlohmann::json::parse(spec_json));
            Dataset ds;
            {
                py::gil_scoped_release release;
                ds = run_study(spec, workers);
            }
            write_dataset(ds, csv_path);
            return static_cast<int>(ds.records.size());
        },
        py::arg("spec_json"), py::arg("csv_path"), py::arg("workers") = 1);

    m.def(
        "featurize",
        [](const std::vector<double>& loads, bool magnitude) {
            FeatureSpec s;
            if (magnitude) s.mode = FeatureMode::normalized_plus_magnitude;
            return featurize(loads, s);
        },
        py::arg("loads"), py::arg("magnitude") = false);

    m.def(
        "train_knn",
        [](const std::vector<std::vector<double>>& x, const std::vector<int>& y, int k) {
            return to_json(train_knn(x, y, k)).dump();
        },
        py::arg("features"), py::arg("labels"), py::arg("k"));

    m.def("knn_predict", [](const std::string& model_json, const std::vector<double>& row) {
        return knn_from_json(nlohmann::json::parse(model_json)).predict(row);
    });

    m.def("merge_patterns", [](const std::vector<double>& loads4) {
        std::vector<std::vector<double>> out;
        for (const auto& p : merge_patterns(loads4)) out.push_back(p.loads);
        return out;
    });
}
