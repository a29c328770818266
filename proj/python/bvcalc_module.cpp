#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <bvcalc/cli.hpp>
#include <bvcalc/errors.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/perimeter.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/semigroups.hpp>
#include <bvcalc/variation.hpp>

#include <string>
#include <vector>

namespace py = pybind11;
using namespace bvc;

namespace {

py::dict estimate_dict(const McEstimate& e) {
    py::dict d;
    d["value"] = e.value;
    d["std_err"] = e.std_err;
    d["n_samples"] = e.n_samples;
    return d;
}

GradientKind parse_which(const std::string& which) {
    if (which == "stretched") return GradientKind::stretched;
    if (which == "plain") return GradientKind::plain;
    throw ArgumentError("which: expected 'stretched' or 'plain'");
}

}  // namespace

PYBIND11_MODULE(_bvcalc, m) {
    m.doc() = "finite-dimensional BV calculus: measures, variation, perimeters";
    m.attr("__version__") = kCliVersion;

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ArgumentError>(m, "ArgumentError");
    py::register_exception<IntegrityError>(m, "IntegrityError");

    py::class_<SpectralSpace>(m, "SpectralSpace")
        .def_readonly("dim", &SpectralSpace::dim)
        .def_readonly("eigenvalues", &SpectralSpace::eigenvalues)
        .def("r_norm", &SpectralSpace::r_norm)
        .def_static("from_eigenvalues", &SpectralSpace::from_eigenvalues)
        .def_static("dirichlet_half_inverse", &SpectralSpace::dirichlet_half_inverse)
        .def_static("geometric", &SpectralSpace::geometric)
        .def_static("identity", &SpectralSpace::identity);

    py::class_<Potential>(m, "Potential")
        .def("value",
             [](const Potential& u, const std::vector<double>& x) {
                 return u.value(Point{x});
             })
        .def("gradient", [](const Potential& u, const std::vector<double>& x) {
            return u.gradient(Point{x});
        });
    m.def("quadratic_potential",
          [](double kappa, int dim) { return quadratic_potential(kappa, dim); },
          py::arg("kappa"), py::arg("dim"));
    m.def("reaction_diffusion_potential",
          [](const std::vector<double>& coeffs, const SpectralSpace& space,
             int quad_points) {
              return reaction_diffusion_potential(make_nonlinearity(coeffs), space,
                                                  quad_points);
          },
          py::arg("coeffs"), py::arg("space"), py::arg("quad_points") = 256);
    m.def("moreau_yosida", &moreau_yosida, py::arg("potential"), py::arg("alpha"));
    m.def("yosida_scalar",
          [](const std::vector<double>& coeffs, double alpha, double s) {
              return yosida_scalar(make_nonlinearity(coeffs), alpha, s);
          },
          py::arg("coeffs"), py::arg("alpha"), py::arg("s"));

    py::class_<Measure>(m, "Measure")
        .def_property_readonly("dim", &Measure::dim)
        .def("covariance_diag", &Measure::covariance_diag)
        .def("v_z",
             [](const Measure& nu, const std::vector<double>& x,
                const std::vector<double>& z) { return nu.v_z(Point{x}, z); })
        .def("sample_many",
             [](const Measure& nu, uint64_t n, uint64_t seed, uint64_t stream) {
                 RngStream st{seed, stream};
                 std::vector<std::vector<double>> out;
                 out.reserve(n);
                 for (uint64_t i = 0; i < n; ++i) {
                     SampleRng r = st.at_sample((uint32_t)i);
                     out.push_back(nu.sample(r).coords);
                 }
                 return out;
             },
             py::arg("n"), py::arg("seed") = 0, py::arg("stream") = 0);
    m.def("gaussian_measure",
          [](const SpectralSpace& s) { return Measure{make_gaussian(s)}; },
          py::arg("space"));
    m.def("weighted_gaussian_measure",
          [](const SpectralSpace& s, const Potential& u) {
              return Measure{make_weighted_gaussian(s, u)};
          },
          py::arg("space"), py::arg("potential"));
    m.def("product_measure",
          [](double mm, const std::vector<double>& mus) {
              return Measure{make_product(mm, mus)};
          },
          py::arg("m"), py::arg("mus"));
    m.def("moment_b", &moment_b, py::arg("m"), py::arg("N"));

    py::class_<BvCandidate>(m, "BvCandidate");
    m.def("candidate_halfspace",
          [](std::vector<double> a, double r) { return bv_halfspace(std::move(a), r); },
          py::arg("a"), py::arg("r"));
    m.def("candidate_affine",
          [](const SpectralSpace& s, std::vector<int> active, std::vector<double> w,
             double b) {
              return bv_cylinder(s, cyl_affine(std::move(active), std::move(w), b));
          },
          py::arg("space"), py::arg("active"), py::arg("w"), py::arg("b") = 0.0);
    m.def("candidate_tanh_affine",
          [](const SpectralSpace& s, std::vector<int> active, std::vector<double> w,
             double b) {
              return bv_cylinder(s, cyl_tanh_affine(std::move(active), std::move(w), b));
          },
          py::arg("space"), py::arg("active"), py::arg("w"), py::arg("b") = 0.0);
    m.def("candidate_radial_tanh",
          [](const SpectralSpace& s, std::vector<int> active, double scale) {
              return bv_cylinder(s, cyl_radial_tanh(std::move(active), scale));
          },
          py::arg("space"), py::arg("active"), py::arg("scale"));

    m.def("direct_variation",
          [](const Measure& nu, const BvCandidate& u, const std::string& which,
             uint64_t n, uint64_t seed) {
              return estimate_dict(
                  direct_variation(nu, u, parse_which(which), n, RngStream{seed, 2}));
          },
          py::arg("measure"), py::arg("candidate"), py::arg("which") = "stretched",
          py::arg("n") = 65536, py::arg("seed") = 0);
    m.def("sup_variation_vz",
          [](const Measure& nu, const BvCandidate& u, std::vector<int> active,
             const std::vector<double>& z, uint64_t seed, int restarts, int steps,
             uint64_t batch, uint64_t final_samples) {
              AscentConfig cfg;
              cfg.restarts = restarts;
              cfg.steps = steps;
              cfg.batch = batch;
              cfg.final_samples = final_samples;
              SupResult res =
                  sup_variation(nu, u, scalar_family(std::move(active)),
                                VariationKind::Vz, z, cfg, RngStream{seed, 3});
              py::dict d = estimate_dict(res.lower_bound);
              d["restart_values"] = res.trace.restart_values;
              d["winner"] = res.trace.winner;
              return d;
          },
          py::arg("measure"), py::arg("candidate"), py::arg("active"), py::arg("z"),
          py::arg("seed") = 0, py::arg("restarts") = 3, py::arg("steps") = 300,
          py::arg("batch") = 256, py::arg("final_samples") = 1 << 15);
    m.def("halfspace_perimeter",
          [](const Measure& nu, std::vector<double> a, double r,
             const std::string& which, uint64_t n, uint64_t seed) {
              EvalEngine eng{RngStream{seed, 4}, n, 32, 1};
              return estimate_dict(
                  halfspace_perimeter(nu, Halfspace{std::move(a), r},
                                      parse_which(which), eng));
          },
          py::arg("measure"), py::arg("a"), py::arg("r"),
          py::arg("which") = "stretched", py::arg("n") = 65536, py::arg("seed") = 0);
    m.def("mehler_halfspace_variation",
          [](const SpectralSpace& s, const std::vector<double>& a, double r, double t,
             const std::string& which) {
              return mehler_halfspace_variation(make_gaussian(s), a, r, t,
                                                parse_which(which));
          },
          py::arg("space"), py::arg("a"), py::arg("r"), py::arg("t"),
          py::arg("which") = "stretched");
    m.def("semigroup_variation_curve",
          [](const Measure& nu, const BvCandidate& u, const std::vector<double>& t_grid,
             const std::string& which, uint64_t n, uint64_t seed) {
              SemigroupSpec sg = make_semigroup(SemigroupKind::classical_mehler, nu);
              EvalEngine eng{RngStream{seed, 5}, n, 32, 1};
              VariationCurve c =
                  semigroup_variation(u, sg, t_grid, parse_which(which), eng);
              py::dict d;
              d["t_grid"] = c.t_grid;
              std::vector<double> vals, errs;
              for (const auto& e : c.values) {
                  vals.push_back(e.value);
                  errs.push_back(e.std_err);
              }
              d["values"] = vals;
              d["std_errs"] = errs;
              d["limit"] = c.extrapolation.limit;
              d["stable"] = c.stable_limit;
              d["monotone"] = c.monotone;
              return d;
          },
          py::arg("measure"), py::arg("candidate"), py::arg("t_grid"),
          py::arg("which") = "stretched", py::arg("n") = 16384, py::arg("seed") = 0);
    m.def("partial_star",
          [](const Measure& nu, const SpectralSpace& s, std::vector<int> active,
             std::vector<double> w, double b, const std::vector<double>& z,
             const std::vector<double>& x) {
              (void)s;
              CylFunction phi = cyl_tanh_affine(std::move(active), std::move(w), b);
              return partial_star(nu, phi, z, Point{x});
          },
          py::arg("measure"), py::arg("space"), py::arg("active"), py::arg("w"),
          py::arg("b"), py::arg("z"), py::arg("x"));
    m.def("normal_pdf", &normal_pdf);
    m.def("normal_cdf", &normal_cdf);

    m.def("run_cli", &run_cli, py::arg("args"),
          "run the command-line front end in-process; returns the exit code");
}
