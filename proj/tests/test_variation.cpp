#include <doctest.h>

#include <bvcalc/cylinder.hpp>
#include <bvcalc/errors.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/semigroups.hpp>
#include <bvcalc/spectral.hpp>
#include <bvcalc/variation.hpp>

#include <cmath>
#include <functional>
#include <vector>

using namespace bvc;

namespace {

// Composite Simpson on [a, b].
double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2) ++n;
    double h = (b - a) / n, s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

Point rand_point(SampleRng& g, int dim, double scale) {
    Point x;
    x.coords.resize(dim);
    for (int k = 0; k < dim; ++k) x.coords[k] = scale * g.next_normal();
    return x;
}

}  // namespace

TEST_CASE("direct variation closed forms") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.25});
    auto nu = Measure{make_gaussian(space)};

    auto zero = bv_cylinder(space, cyl_constant(3.0));
    auto est0 = direct_variation(nu, zero, GradientKind::stretched, 4096, RngStream{7u, 1u});
    CHECK(est0.value == 0.0);
    CHECK(est0.std_err == 0.0);

    // Affine candidate: the integrand is the constant |Ra| (or |a|).
    auto aff = bv_cylinder(space, cyl_affine({0, 1}, {2.0, -1.0}, 0.4));
    auto em = direct_variation(nu, aff, GradientKind::stretched, 4096, RngStream{7u, 2u});
    CHECK(em.value == doctest::Approx(std::sqrt(4.25)).epsilon(1e-12));
    CHECK(em.std_err <= 1e-12);
    auto ep = direct_variation(nu, aff, GradientKind::plain, 4096, RngStream{7u, 3u});
    CHECK(ep.value == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));

    // tanh profile against an independent Simpson oracle.
    auto th = bv_cylinder(space, cyl_tanh_affine({0}, {1.0}, 0.0));
    double lam = 1.0;
    double oracle = simpson(
        [&](double x) {
            double c = std::cosh(x);
            double dens = std::exp(-x * x / (2.0 * lam)) / std::sqrt(2.0 * M_PI * lam);
            return std::sqrt(lam) / (c * c) * dens;
        },
        -10.0, 10.0, 4000);
    auto et = direct_variation(nu, th, GradientKind::stretched, 1u << 15, RngStream{7u, 4u});
    CHECK(std::abs(et.value - oracle) <= 4.0 * et.std_err);

    // Homogeneity: doubling the candidate doubles the estimate (same seeds).
    auto aff2 = bv_cylinder(space, cyl_affine({0, 1}, {4.0, -2.0}, 0.8));
    auto em2 = direct_variation(nu, aff2, GradientKind::stretched, 4096, RngStream{7u, 2u});
    CHECK(em2.value == doctest::Approx(2.0 * em.value).epsilon(1e-12));
}

TEST_CASE("family parameter gradients match finite differences") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5});
    auto gauss = Measure{make_gaussian(space)};
    auto prod = Measure{make_product(2.0, {1.0, 0.7})};
    auto u = bv_cylinder(space, cyl_tanh_affine({0, 1}, {0.9, -0.7}, 0.1));

    SampleRng g(5150u, 2u, 0u);
    std::vector<Point> pts;
    for (int i = 0; i < 12; ++i) pts.push_back(rand_point(g, 2, 1.1));

    auto check_grad = [&](const Measure& nu, const TestFamily& fam, VariationKind kind,
                          const std::vector<double>& z) {
        int np = family_param_count(fam);
        std::vector<double> theta((size_t)np);
        for (int j = 0; j < np; ++j) theta[(size_t)j] = 0.5 * g.next_normal();

        std::vector<double> grad((size_t)np, 0.0);
        (void)family_objective(nu, u, fam, kind, z, theta, pts, grad);

        double h = 1e-5;
        for (int j = 0; j < np; ++j) {
            auto tp = theta, tm = theta;
            tp[(size_t)j] += h;
            tm[(size_t)j] -= h;
            double fd = (family_objective(nu, u, fam, kind, z, tp, pts, {}) -
                         family_objective(nu, u, fam, kind, z, tm, pts, {})) /
                        (2.0 * h);
            CHECK(grad[(size_t)j] == doctest::Approx(fd).epsilon(2e-5).scale(1.0));
        }
    };

    auto sf = scalar_family({0, 1});
    auto ff = field_family({0, 1}, {0, 1});
    std::vector<double> z = {0.8, -0.5};
    check_grad(gauss, sf, VariationKind::Vz, z);
    check_grad(gauss, ff, VariationKind::V, {});
    check_grad(gauss, ff, VariationKind::V0, {});
    check_grad(prod, sf, VariationKind::Vz, z);
    check_grad(prod, ff, VariationKind::V, {});
}

TEST_CASE("scalar family ascent attains the directional variation") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.25});
    auto nu = Measure{make_gaussian(space)};
    auto u = bv_cylinder(space, cyl_tanh_affine({0}, {1.0}, 0.0));

    // V_z for z = e_0 equals the stretched directional integral.
    auto direct = direct_variation(nu, u, GradientKind::stretched, 1u << 15, RngStream{11u, 1u});

    AscentConfig cfg;
    cfg.restarts = 3;
    cfg.steps = 250;
    cfg.batch = 256;
    cfg.final_samples = 1u << 15;
    std::vector<double> z = {1.0, 0.0};
    auto sup = sup_variation(nu, u, scalar_family({0, 1}), VariationKind::Vz, z, cfg,
                             RngStream{11u, 2u});
    CHECK(sup.lower_bound.value >= 0.9 * direct.value);
    CHECK(sup.lower_bound.value <=
          direct.value + 4.0 * (sup.lower_bound.std_err + direct.std_err));
    CHECK((int)sup.trace.restart_values.size() == cfg.restarts);
    CHECK((int)sup.trace.paths.size() == cfg.restarts);
    CHECK((int)sup.trace.paths[0].size() == cfg.steps);

    // Null candidate: the objective surface is identically zero.
    auto nil = bv_cylinder(space, cyl_constant(0.0));
    auto sup0 = sup_variation(nu, nil, scalar_family({0, 1}), VariationKind::Vz, z, cfg,
                              RngStream{11u, 3u});
    CHECK(sup0.lower_bound.value == 0.0);
    CHECK(sup0.lower_bound.std_err == 0.0);
}

TEST_CASE("field family ascent attains the full variation of a smooth candidate") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5});
    auto nu = Measure{make_gaussian(space)};
    auto u = bv_cylinder(space, cyl_tanh_affine({0, 1}, {0.8, -0.6}, 0.0));

    AscentConfig cfg;
    cfg.restarts = 3;
    cfg.steps = 300;
    cfg.batch = 256;
    cfg.final_samples = 1u << 15;

    auto dm = direct_variation(nu, u, GradientKind::stretched, 1u << 15, RngStream{12u, 1u});
    auto sm = sup_variation(nu, u, field_family({0, 1}, {0, 1}), VariationKind::V, {}, cfg,
                            RngStream{12u, 2u});
    CHECK(sm.lower_bound.value >= 0.9 * dm.value);
    CHECK(sm.lower_bound.value <= dm.value + 4.0 * (sm.lower_bound.std_err + dm.std_err));

    auto d0 = direct_variation(nu, u, GradientKind::plain, 1u << 15, RngStream{12u, 3u});
    auto s0 = sup_variation(nu, u, field_family({0, 1}, {0, 1}), VariationKind::V0, {}, cfg,
                            RngStream{12u, 4u});
    CHECK(s0.lower_bound.value >= 0.9 * d0.value);
    CHECK(s0.lower_bound.value <= d0.value + 4.0 * (s0.lower_bound.std_err + d0.std_err));
}

TEST_CASE("sup variation on a gaussian halfspace approaches the analytic value") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.25});
    auto nu = Measure{make_gaussian(space)};
    // sigma^2 = <Q a, a> = 1 for a = e_0, so V = phi(r) |Ra| / sigma = phi(0.3).
    auto u = bv_halfspace({1.0, 0.0}, 0.3);
    double target = normal_pdf(0.3);

    AscentConfig cfg;
    cfg.restarts = 4;
    cfg.steps = 400;
    cfg.batch = 256;
    cfg.final_samples = 1u << 16;
    auto sup = sup_variation(nu, u, field_family({0, 1}, {0, 1}), VariationKind::V, {}, cfg,
                             RngStream{13u, 1u});
    CHECK(sup.lower_bound.value >= 0.95 * target);
    CHECK(sup.lower_bound.value <= target + 4.0 * sup.lower_bound.std_err + 0.01);
}

TEST_CASE("semigroup variation of the halfspace under the classical kernel") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5});
    auto gm = make_gaussian(space);
    auto nu = Measure{gm};
    std::vector<double> a = {1.0, 0.0};
    double r = 0.4;
    auto u = bv_halfspace(a, r);

    // Closed form against an independent 1D quadrature of the kernel gradient.
    double t0 = 0.3;
    double closed = mehler_halfspace_variation(gm, a, r, t0, GradientKind::stretched);
    double want = std::exp(-t0) * normal_pdf(0.4);
    CHECK(closed == doctest::Approx(want).epsilon(1e-12));
    double tau = std::sqrt(1.0 - std::exp(-2.0 * t0));
    double byquad = simpson(
        [&](double w) {
            double dens = std::exp(-w * w / 2.0) / std::sqrt(2.0 * M_PI);
            double arg = (r - std::exp(-t0) * w) / tau;
            return dens * normal_pdf(arg) * std::exp(-t0) / tau;
        },
        -10.0, 10.0, 4000);
    CHECK(closed == doctest::Approx(byquad).epsilon(1e-9));

    // A full-measure Monte Carlo pass over the same integrand agrees.
    auto mc = mehler_halfspace_variation_mc(gm, a, r, t0, GradientKind::stretched, 1u << 14,
                                            RngStream{14u, 9u});
    CHECK(std::abs(mc.value - closed) <= 4.0 * mc.std_err);

    auto sg = make_semigroup(SemigroupKind::classical_mehler, nu);
    std::vector<double> grid = {0.4, 0.2, 0.1, 0.05, 0.025, 0.0125};
    EvalEngine eng;
    eng.rng = RngStream{14u, 1u};
    eng.mc_samples = 1u << 14;
    auto curve = semigroup_variation(u, sg, grid, GradientKind::stretched, eng);
    REQUIRE(curve.values.size() == grid.size());
    for (size_t i = 0; i < grid.size(); ++i) {
        double cf = std::exp(-grid[i]) * normal_pdf(0.4);
        CHECK(std::abs(curve.values[i].value - cf) <= 4.0 * curve.values[i].std_err + 1e-9);
    }
    CHECK(curve.monotone);
    CHECK(curve.stable_limit);
    double selast = curve.values.back().std_err;
    CHECK(std::abs(curve.extrapolation.limit - normal_pdf(0.4)) <=
          0.02 * normal_pdf(0.4) + 8.0 * selast);

    // Constant candidates have an identically zero curve.
    auto c = bv_cylinder(space, cyl_constant(0.7));
    auto curve0 = semigroup_variation(c, sg, grid, GradientKind::stretched, eng);
    for (const auto& v : curve0.values) {
        CHECK(v.value == 0.0);
        CHECK(v.std_err == 0.0);
    }
    CHECK(curve0.stable_limit);
}

TEST_CASE("semigroup variation of a smooth cylinder recovers the direct value") {
    auto space = SpectralSpace::from_eigenvalues({1.0});
    auto gm = make_gaussian(space);
    auto nu = Measure{gm};
    auto u = bv_cylinder(space, cyl_tanh_affine({0}, {1.0}, 0.0));
    auto direct = direct_variation(nu, u, GradientKind::stretched, 1u << 15, RngStream{15u, 1u});

    auto sg = make_semigroup(SemigroupKind::classical_mehler, nu);
    std::vector<double> grid = {0.2, 0.1, 0.05, 0.025, 0.0125};
    EvalEngine eng;
    eng.rng = RngStream{15u, 2u};
    eng.mc_samples = 1u << 14;
    eng.gh_order = 32;
    auto curve = semigroup_variation(u, sg, grid, GradientKind::stretched, eng);
    CHECK(curve.stable_limit);
    double selast = curve.values.back().std_err;
    CHECK(std::abs(curve.extrapolation.limit - direct.value) <=
          0.02 * direct.value + 4.0 * (selast + direct.std_err));

    // Scaling the candidate scales the whole curve (same engine seeds).
    auto u2 = bv_cylinder(space, cyl_multiply(cyl_constant(2.0), cyl_tanh_affine({0}, {1.0}, 0.0)));
    auto curve2 = semigroup_variation(u2, sg, grid, GradientKind::stretched, eng);
    for (size_t i = 0; i < grid.size(); ++i) {
        CHECK(curve2.values[i].value ==
              doctest::Approx(2.0 * curve.values[i].value).epsilon(1e-12));
    }

    // Euler path on the flat weighted measure agrees loosely near t = 0.
    auto nuw = Measure{make_weighted_gaussian(space, quadratic_potential(0.0, 1))};
    EmParams em;
    em.dt = 2e-3;
    em.paths = 192;
    auto sge = make_semigroup(SemigroupKind::dirichlet_em, nuw, em);
    EvalEngine enge;
    enge.rng = RngStream{15u, 3u};
    enge.mc_samples = 160;  // outer points
    std::vector<double> gride = {0.2, 0.1, 0.05, 0.025};
    auto curvee = semigroup_variation(u, sge, gride, GradientKind::stretched, enge);
    double last = curvee.values.back().value;
    CHECK(std::abs(last - direct.value) <=
          0.1 * direct.value + 4.0 * curvee.values.back().std_err);
}

TEST_CASE("semigroup variation validates its grid") {
    auto space = SpectralSpace::from_eigenvalues({1.0});
    auto nu = Measure{make_gaussian(space)};
    auto u = bv_halfspace({1.0}, 0.0);
    auto sg = make_semigroup(SemigroupKind::classical_mehler, nu);
    EvalEngine eng;
    CHECK_THROWS_AS(
        (void)semigroup_variation(u, sg, {0.4, 0.2, 0.1}, GradientKind::stretched, eng),
        ArgumentError);
    CHECK_THROWS_AS((void)semigroup_variation(u, sg, {0.1, 0.2, 0.4, 0.8},
                                              GradientKind::stretched, eng),
                    ArgumentError);
    CHECK_THROWS_AS((void)semigroup_variation(u, sg, {0.4, 0.2, 0.1, 0.09},
                                              GradientKind::stretched, eng),
                    ArgumentError);
}

TEST_CASE("variation inequalities hold with the stated slack") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5});
    auto nu = Measure{make_gaussian(space)};
    auto u = bv_cylinder(space, cyl_tanh_affine({0, 1}, {0.8, -0.6}, 0.0));

    AscentConfig cfg;
    cfg.restarts = 2;
    cfg.steps = 200;
    cfg.batch = 192;
    cfg.final_samples = 1u << 14;

    std::vector<std::vector<double>> zs = {{1.0, 0.0}, {0.6, 0.8}, {2.0, 0.0}};
    auto rep = variation_inequalities_report(nu, u, zs, scalar_family({0, 1}),
                                             field_family({0, 1}, {0, 1}), cfg,
                                             RngStream{16u, 1u});
    REQUIRE(rep.rows.size() == zs.size() + 1);
    for (const auto& row : rep.rows) {
        CAPTURE(row.label);
        CHECK(row.pass);
    }
    REQUIRE(rep.vz.size() == zs.size());
    // Doubling z doubles the directional bound (rows 0 and 2), up to noise.
    double ratio = rep.vz[2].value / rep.vz[0].value;
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.25));
}
