#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "langbias/cli.hpp"
#include "langbias/onedim.hpp"
#include "langbias/optimizer.hpp"
#include "langbias/sampler.hpp"
#include "langbias/variance.hpp"

namespace py = pybind11;
using namespace langbias;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Grid make_grid(const std::string& kind, int n, std::optional<double> a, std::optional<double> b) {
  if (kind == "torus1d") return build_grid(Domain::torus1d(), n);
  if (kind == "torus2d") return build_grid(Domain::torus2d(), n);
  if (kind == "real1d") {
    if (!a || !b) throw std::invalid_argument("real1d needs a and b");
    return build_grid(Domain::real1d(*a, *b), n);
  }
  throw std::invalid_argument("unknown domain kind '" + kind + "'");
}

// str -> formula or builtin, number -> constant, array -> nodal values (2D arrays in (j, i) order)
ScalarField field(const py::object& o, const Grid& g) {
  if (py::isinstance<py::str>(o)) return sample_field(o.cast<std::string>(), g);
  if (py::isinstance<py::float_>(o) || py::isinstance<py::int_>(o)) return ScalarField(g, o.cast<double>());
  Array a = o.cast<Array>();
  if (std::size_t(a.size()) != g.size())
    throw std::invalid_argument("array has " + std::to_string(a.size()) + " values, grid has " + std::to_string(g.size()));
  return ScalarField(g, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(const ScalarField& f) {
  const Grid& g = f.grid();
  std::vector<py::ssize_t> shape = g.dim() == 2 ? std::vector<py::ssize_t>{g.n(), g.n()} : std::vector<py::ssize_t>{g.n()};
  py::array_t<double> out(shape);
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

py::dict estimate_dict(const VarianceEstimate& e) {
  py::dict d;
  d["sigma2"] = e.sigma2;
  d["I"] = e.I;
  d["Z"] = e.Z;
  d["Z_U"] = e.Z_U;
  d["dirichlet"] = e.dirichlet;
  d["backend"] = e.backend;
  d["tail_ratio"] = e.tail_ratio;
  d["warnings"] = e.warnings;
  return d;
}

Problem problem(const Grid& g, const py::object& V, const py::object& f, const py::object& U, const std::string& solver) {
  Problem p = Problem::single(field(V, g), field(U, g), field(f, g));
  p.solver.kind = parse_solver(solver);
  return p;
}

}  // namespace

PYBIND11_MODULE(_langbias, m) {
  m.doc() = "Asymptotic variance and optimal biasing potentials for overdamped Langevin importance sampling";

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);
  py::register_exception<GridMismatch>(m, "GridMismatch", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<Expression>(m, "Expression")
      .def(py::init([](const std::string& text, int dim) { return Expression::parse(text, dim); }), py::arg("text"),
           py::arg("dim") = 1)
      .def("__call__", [](const Expression& e, double x) { return e.evaluate(x); })
      .def("__call__", [](const Expression& e, double x1, double x2) { return e.evaluate(x1, x2); })
      .def("derivative", py::overload_cast<std::string_view>(&Expression::differentiate, py::const_), py::arg("var"))
      .def_property_readonly("dim", &Expression::dim)
      .def("is_constant", &Expression::is_constant)
      .def("__str__", &Expression::to_string)
      .def("__repr__", [](const Expression& e) { return "Expression('" + e.to_string() + "')"; });

  py::class_<Grid>(m, "Grid")
      .def(py::init(&make_grid), py::arg("kind") = "torus1d", py::arg("n") = 256, py::arg("a") = py::none(),
           py::arg("b") = py::none())
      .def_property_readonly("n", &Grid::n)
      .def_property_readonly("dim", &Grid::dim)
      .def_property_readonly("spacing", &Grid::spacing)
      .def_property_readonly("size", &Grid::size)
      .def_property_readonly("kind", [](const Grid& g) { return g.domain().name(); })
      .def("coords", [](const Grid& g) {
        py::array_t<double> out(g.n());
        for (int i = 0; i < g.n(); ++i) out.mutable_data()[i] = g.coord(i);
        return out;
      })
      .def("sample", [](const Grid& g, const py::object& s) { return to_numpy(field(s, g)); }, py::arg("source"))
      .def("integrate", [](const Grid& g, const py::object& s) { return integrate(field(s, g)); }, py::arg("values"));

  m.def(
      "asym_variance",
      [](const Grid& g, const py::object& V, const py::object& f, const py::object& U, const std::string& solver) {
        return estimate_dict(asym_variance(problem(g, V, f, U, solver)));
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("U") = 0.0, py::arg("solver") = "direct");

  m.def(
      "functional_gradient",
      [](const Grid& g, const py::object& V, const py::object& f, const py::object& U, const std::string& metric) {
        return to_numpy(functional_gradient(problem(g, V, f, U, "direct"), parse_metric(metric)));
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("U") = 0.0, py::arg("metric") = "lebesgue");

  m.def(
      "sigma_star_1d", [](const Grid& g, const py::object& V, const py::object& f) { return sigma_star_1d(field(f, g), field(V, g)); },
      py::arg("grid"), py::arg("V"), py::arg("f"));

  m.def(
      "optimal_density_1d",
      [](const Grid& g, const py::object& V, const py::object& f) { return to_numpy(optimal_density_1d(field(f, g), field(V, g))); },
      py::arg("grid"), py::arg("V"), py::arg("f"));

  m.def(
      "regularize_density",
      [](const Grid& g, const py::object& density, const py::object& V, double eps) {
        return to_numpy(regularize_density(field(density, g), field(V, g), eps));
      },
      py::arg("grid"), py::arg("density"), py::arg("V"), py::arg("eps"));

  m.def(
      "optimize",
      [](const Grid& g, const py::object& V, const py::object& f, const py::object& U, const std::string& metric,
         const std::string& step_rule, int max_iters, double grad_tol) {
        OptimizerConfig c;
        c.metric = parse_metric(metric);
        c.step_rule = parse_step_rule(step_rule);
        c.max_iters = max_iters;
        c.grad_tol = grad_tol;
        OptimizerTrace t;
        {
          py::gil_scoped_release release;
          t = steepest_descent(Problem::single(field(V, g), field(U, g), field(f, g)), c);
        }
        py::list recs;
        for (const auto& r : t.records) {
          py::dict d;
          d["iter"] = r.iter;
          d["sigma2"] = r.sigma2;
          d["grad_norm"] = r.grad_norm;
          d["step"] = r.step;
          d["backtracks"] = r.backtracks;
          d["cv"] = r.cv;
          recs.append(d);
        }
        py::dict out;
        out["records"] = recs;
        out["reason"] = stop_reason_name(t.reason);
        out["failure"] = t.failure;
        if (!t.records.empty()) {
          out["U"] = to_numpy(t.U);
          out["density"] = to_numpy(t.density);
        }
        return out;
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("U") = 0.0, py::arg("metric") = "lebesgue",
      py::arg("step_rule") = "fixed_armijo", py::arg("max_iters") = 500, py::arg("grad_tol") = 1e-8);

  m.def(
      "minimize_theta",
      [](const Grid& g, const py::object& V, const py::object& f, double lo, double hi, double tol) {
        const ThetaResult r = minimize_theta(Problem::single(field(V, g), ScalarField(g, 0.0), field(f, g)), {lo, hi}, tol);
        py::dict d;
        d["theta"] = r.theta;
        d["value"] = r.value;
        d["at_endpoint"] = r.at_endpoint;
        d["evaluations"] = r.evaluations;
        return d;
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("lo") = 0.0, py::arg("hi") = 2.0, py::arg("tol") = 1e-4);

  m.def(
      "iid_variance",
      [](const Grid& g, const py::object& V, const py::object& f, const py::object& U) {
        return estimate_dict(iid_variance(problem(g, V, f, U, "direct")));
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("U") = 0.0);

  m.def(
      "subsampled_variance",
      [](const Grid& g, const py::object& V, const py::object& f, double tau, const py::object& U) {
        return estimate_dict(subsampled_variance(problem(g, V, f, U, "direct"), tau));
      },
      py::arg("grid"), py::arg("V"), py::arg("f"), py::arg("tau"), py::arg("U") = 0.0);

  m.def(
      "philox",
      [](std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key) { return Philox::bijection(counter, key); },
      py::arg("counter"), py::arg("key"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
