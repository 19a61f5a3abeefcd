#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fzilab/bellman.hpp"
#include "fzilab/csv.hpp"
#include "fzilab/decomposition.hpp"
#include "fzilab/experiments.hpp"
#include "fzilab/fitted.hpp"
#include "fzilab/losses.hpp"

namespace py = pybind11;
using namespace fzilab;

namespace {

// JSON crosses the boundary as text; the Python side parses it with json.loads.
py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

CategoricalDistribution distribution(const SupportGrid& grid, const Eigen::VectorXd& mass) { return {grid, mass}; }

std::vector<RewardAtom> atoms_from(const std::vector<double>& values, const std::vector<double>& probs) {
    if (values.size() != probs.size()) throw ShapeError("values and probs differ in length");
    std::vector<RewardAtom> atoms;
    for (std::size_t i = 0; i < values.size(); ++i) atoms.push_back({values[i], probs[i]});
    return atoms;
}

} // namespace

PYBIND11_MODULE(_fzilab, m) {
    m.doc() = "Categorical fitted distributional iteration";
    m.attr("__version__") = kLibraryVersion;

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<InfeasibleError>(m, "InfeasibleError", base.ptr());
    py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<SizeError>(m, "SizeError", base.ptr());

    py::class_<SupportGrid>(m, "SupportGrid")
        .def(py::init<double, double, int>(), py::arg("l0"), py::arg("lk"), py::arg("k"))
        .def_property_readonly("lower", &SupportGrid::lower)
        .def_property_readonly("upper", &SupportGrid::upper)
        .def_property_readonly("bins", &SupportGrid::bins)
        .def_property_readonly("width", &SupportGrid::width)
        .def("midpoints", &SupportGrid::midpoints)
        .def("bin_of", &SupportGrid::bin_of)
        .def("__repr__", [](const SupportGrid& g) {
            return "SupportGrid(" + format_double(g.lower()) + ", " + format_double(g.upper()) + ", " +
                   std::to_string(g.bins()) + ")";
        });

    m.def("categorical_loss", &kernel::categorical_loss, py::arg("theta"), py::arg("x"), py::arg("p"),
          "Cross-entropy of softmax(theta x) against p.");
    m.def("categorical_gradient", &kernel::categorical_gradient, py::arg("theta"), py::arg("x"), py::arg("p"),
          "Gradient (softmax(theta x) - p) x^T.");
    m.def("softmax", &softmax);

    m.def(
        "project",
        [](const std::vector<double>& values, const std::vector<double>& probs, const SupportGrid& grid) {
            const auto atoms = atoms_from(values, probs);
            return Eigen::VectorXd(project_categorical(atoms, grid).mass());
        },
        py::arg("values"), py::arg("probs"), py::arg("grid"), "Two-neighbor projection of weighted atoms.");
    m.def(
        "cramer_distance",
        [](const SupportGrid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
            return cramer_distance(distribution(g, a), distribution(g, b));
        },
        py::arg("grid"), py::arg("p"), py::arg("q"));
    m.def(
        "wasserstein1_distance",
        [](const SupportGrid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
            return wasserstein1_distance(distribution(g, a), distribution(g, b));
        },
        py::arg("grid"), py::arg("p"), py::arg("q"));

    m.def(
        "decompose",
        [](const SupportGrid& g, const Eigen::VectorXd& p, std::optional<double> epsilon) {
            const TargetHistogram target(g, p);
            const auto d = decompose(target, epsilon.value_or(std::max(minimal_epsilon(target), 1e-12)));
            return py::make_tuple(d.mean_bin, d.epsilon, Eigen::VectorXd(d.mu.p()));
        },
        py::arg("grid"), py::arg("p"), py::arg("epsilon") = py::none(),
        "Split p into (1 - eps) one-hot at the mean bin plus eps mu; returns (mean_bin, eps, mu).");
    m.def(
        "minimal_epsilon", [](const SupportGrid& g, const Eigen::VectorXd& p) { return minimal_epsilon({g, p}); },
        py::arg("grid"), py::arg("p"));

    m.def(
        "max_stable_step",
        [](const SupportGrid& g, double norm_bound) { return 2.0 / (g.bins() * norm_bound * norm_bound); },
        py::arg("grid"), py::arg("norm_bound"));

    m.def(
        "value_iteration",
        [](int states, int actions, int reward_support, std::uint64_t seed, double gamma, double tol) {
            return classical_value_iteration(make_random_mdp(states, actions, reward_support, seed, gamma), tol).q;
        },
        py::arg("states"), py::arg("actions"), py::arg("reward_support"), py::arg("seed"), py::arg("gamma"),
        py::arg("tol") = 1e-10, "Optimal Q for a seeded random MDP, as a states x actions list.");

    m.def(
        "validate",
        [](const std::string& path, std::int64_t seed_offset) { validate_run_config(load_run_config(path, seed_offset)); },
        py::arg("config"), py::arg("seed_offset") = 0);
    m.def(
        "run",
        [](const std::string& path, const std::string& out_dir, int workers, std::int64_t seed_offset) {
            const auto config = load_run_config(path, seed_offset);
            RunOutcome o;
            {
                py::gil_scoped_release release;
                o = run_experiment(config, out_dir, workers);
            }
            py::list checks;
            for (const auto& c : o.checks) {
                checks.append(py::dict(py::arg("name") = c.name, py::arg("passed") = c.pass, py::arg("detail") = c.detail));
            }
            return py::dict(py::arg("experiment") = o.experiment, py::arg("passed") = o.all_pass(),
                            py::arg("checks") = checks, py::arg("files") = o.files,
                            py::arg("summary") = to_python(o.summary));
        },
        py::arg("config"), py::arg("out_dir"), py::arg("workers") = 1, py::arg("seed_offset") = 0,
        "Runs a config (or a manifest) and writes its artifacts to out_dir.");
}
