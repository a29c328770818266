#include <doctest.h>

#include <bvcalc/cylinder.hpp>
#include <bvcalc/errors.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/rng.hpp>
#include <bvcalc/spectral.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

using namespace bvc;

namespace {

// Composite Simpson on [lo, hi]; independent cross-check for the
// Gamma-function moment formulas.
double simpson(const std::function<double(double)>& f, double lo, double hi,
               int panels = 4000) {
    double h = (hi - lo) / panels, s = f(lo) + f(hi);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
    return s * h / 3.0;
}

struct MeanVar {
    double mean = 0.0;
    double se = 0.0;
};

MeanVar sample_mean(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= (double)v.size();
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= (double)(v.size() - 1);
    return {m, std::sqrt(s2 / (double)v.size())};
}

// Self-normalized weighted mean with delta-method standard error.
MeanVar weighted_mean(const std::vector<double>& f, const std::vector<double>& w) {
    double sw = 0.0, swf = 0.0;
    size_t n = f.size();
    for (size_t i = 0; i < n; ++i) {
        sw += w[i];
        swf += w[i] * f[i];
    }
    double m = swf / sw;
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = w[i] * (f[i] - m);
        var += d * d;
    }
    return {m, std::sqrt(var) / sw};
}

std::vector<Point> draw(const Measure& nu, uint64_t stream, size_t n,
                        std::vector<double>* logw = nullptr) {
    RngStream rs{777u, stream};
    std::vector<Point> out;
    out.reserve(n);
    if (logw) logw->clear();
    for (size_t i = 0; i < n; ++i) {
        auto g = rs.at_sample((uint32_t)i);
        out.push_back(nu.sample(g));
        if (logw) logw->push_back(nu.log_weight(out.back()));
    }
    return out;
}

}  // namespace

TEST_CASE("even-moment constants from the Gamma formula") {
    // m = 1 reduces to standard normal moments.
    CHECK(moment_b(1.0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(moment_b(1.0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(moment_b(1.0, 2) == doctest::Approx(3.0).epsilon(1e-12));
    // m = 2: second constant collapses to 1 by the Gamma recurrence.
    CHECK(std::abs(moment_b(2.0, 1) - 0.675978) <= 1e-6);
    CHECK(moment_b(2.0, 2) == doctest::Approx(1.0).epsilon(1e-12));

    // Independent of the Gamma function: integrate the density directly.
    double m = 2.0, mu = 1.0;
    double a = product_a_const(m);
    auto dens = [&](double s) {
        return a * std::pow(mu, -1.0 / (2.0 * m)) *
               std::exp(-std::pow(std::abs(s), 2.0 * m) / (2.0 * m * mu));
    };
    CHECK(std::abs(simpson(dens, -8.0, 8.0) - 1.0) <= 1e-9);
    for (int N = 1; N <= 3; ++N) {
        double got = simpson(
            [&](double s) { return std::pow(std::abs(s), 2.0 * N) * dens(s); },
            -8.0, 8.0);
        CHECK(std::abs(got - moment_b(m, N)) <= 1e-8 * (1.0 + moment_b(m, N)));
    }
    // m = 1 normalizer is the Gaussian one.
    CHECK(product_a_const(1.0) ==
          doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("gaussian sampler hits its covariance") {
    auto nu = Measure{make_gaussian(SpectralSpace::from_eigenvalues({1.0, 0.25}))};
    size_t n = 1000000;
    std::vector<double> x0, x1;
    x0.reserve(n);
    x1.reserve(n);
    RngStream rs{42u, 1u};
    for (size_t i = 0; i < n; ++i) {
        auto g = rs.at_sample((uint32_t)i);
        Point p = nu.sample(g);
        x0.push_back(p.coords[0] * p.coords[0]);
        x1.push_back(p.coords[1] * p.coords[1]);
    }
    auto m0 = sample_mean(x0), m1 = sample_mean(x1);
    CHECK(std::abs(m0.mean - 1.0) <= 3.0 * m0.se);
    CHECK(std::abs(m1.mean - 0.25) <= 3.0 * m1.se);
    auto cov = nu.covariance_diag();
    CHECK(cov[0] == doctest::Approx(1.0));
    CHECK(cov[1] == doctest::Approx(0.25));
}

TEST_CASE("sampling is reproducible per (seed, stream, index)") {
    auto nu = Measure{make_gaussian(SpectralSpace::geometric(3, 0.5))};
    auto a = draw(nu, 9u, 64);
    auto b = draw(nu, 9u, 64);
    for (size_t i = 0; i < a.size(); ++i)
        for (int k = 0; k < 3; ++k)
            CHECK(a[i].coords[(size_t)k] == b[i].coords[(size_t)k]);
    auto c = draw(nu, 10u, 64);
    int diff = 0;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].coords[0] != c[i].coords[0]) ++diff;
    CHECK(diff == 64);
}

TEST_CASE("logarithmic derivative: gaussian series") {
    auto nu = Measure{make_gaussian(SpectralSpace::from_eigenvalues({1.0, 0.25}))};
    Point x{{0.5, -1.0}};
    CHECK(nu.v_z(x, {1.0, 2.0}) == doctest::Approx(-3.5).epsilon(1e-14));
    CHECK(nu.v_z(x, {0.0, 0.0}) == doctest::Approx(0.0));
    // Linearity under scaling.
    for (double c : {2.0, 10.0})
        CHECK(nu.v_z(x, {c * 1.0, c * 2.0}) ==
              doctest::Approx(c * -3.5).epsilon(1e-14));
    CHECK_THROWS_AS(nu.v_z(x, {1.0}), ArgumentError);
}

TEST_CASE("logarithmic derivative: weighted gaussian") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.25});
    auto base = Measure{make_gaussian(space)};
    // Constant-curvature potential with kappa = 0 reduces to the base case.
    auto flat = Measure{make_weighted_gaussian(space, quadratic_potential(0.0, 2))};
    auto g0 = RngStream{5u, 2u}.at_sample(0);
    for (int i = 0; i < 10; ++i) {
        Point x{{g0.next_normal(), g0.next_normal()}};
        std::vector<double> z{g0.next_normal(), g0.next_normal()};
        CHECK(flat.v_z(x, z) == doctest::Approx(base.v_z(x, z)).epsilon(1e-14));
    }
    // Quadratic potential: the density stays Gaussian with variance
    // lambda_k / (1 + 2 kappa lambda_k), so the log derivative along R z is
    // the series with the shrunk variances.
    double kappa = 0.7;
    auto nu = Measure{make_weighted_gaussian(space, quadratic_potential(kappa, 2))};
    for (int i = 0; i < 10; ++i) {
        Point x{{g0.next_normal(), g0.next_normal()}};
        std::vector<double> z{g0.next_normal(), g0.next_normal()};
        double want = 0.0;
        for (int k = 0; k < 2; ++k) {
            double lam = space.eigenvalues[(size_t)k];
            double shrunk = lam / (1.0 + 2.0 * kappa * lam);
            want += std::sqrt(lam) * z[(size_t)k] * x.coords[(size_t)k] / shrunk;
        }
        CHECK(nu.v_z(x, z) == doctest::Approx(want).epsilon(1e-12));
    }
    // Importance-weighted second moment matches the shrunk variance.
    size_t n = 200000;
    std::vector<double> logw;
    auto pts = draw(nu, 3u, n, &logw);
    std::vector<double> w(n), f(n);
    for (size_t i = 0; i < n; ++i) {
        w[i] = std::exp(logw[i]);
        f[i] = pts[i].coords[0] * pts[i].coords[0];
    }
    auto est = weighted_mean(f, w);
    double want = 1.0 / (1.0 + 2.0 * kappa);
    CHECK(std::abs(est.mean - want) <= 4.0 * est.se);
}

TEST_CASE("logarithmic derivative: product measure formula") {
    double m = 2.0;
    std::vector<double> mus{0.7, 1.3};
    auto nu = Measure{make_product(m, mus)};
    double b1 = moment_b(m, 1);
    Point x{{0.5, -1.2}};
    std::vector<double> z{1.0, -2.0};
    double want = 0.0;
    for (int k = 0; k < 2; ++k) {
        double lam = b1 * std::sqrt(mus[(size_t)k]);
        double s = x.coords[(size_t)k];
        want += std::sqrt(lam) * z[(size_t)k] *
                std::copysign(std::pow(std::abs(s), 2.0 * m - 1.0), s) /
                mus[(size_t)k];
    }
    CHECK(nu.v_z(x, z) == doctest::Approx(want).epsilon(1e-12));
    auto cov = nu.covariance_diag();
    CHECK(cov[0] == doctest::Approx(b1 * std::sqrt(0.7)).epsilon(1e-12));
    CHECK(cov[1] == doctest::Approx(b1 * std::sqrt(1.3)).epsilon(1e-12));
}

TEST_CASE("product sampler moments and gaussian reduction") {
    double mu = 0.8;
    auto nu = Measure{make_product(2.0, {mu})};
    size_t n = 400000;
    auto pts = draw(nu, 4u, n);
    for (int N = 1; N <= 3; ++N) {
        std::vector<double> f(n);
        for (size_t i = 0; i < n; ++i)
            f[i] = std::pow(std::abs(pts[i].coords[0]), 2.0 * N);
        auto est = sample_mean(f);
        double want = moment_b(2.0, N) * std::pow(mu, (double)N / 2.0);
        CHECK(std::abs(est.mean - want) <= 4.0 * est.se);
    }
    // Odd symmetry.
    std::vector<double> f(n);
    for (size_t i = 0; i < n; ++i) f[i] = pts[i].coords[0];
    auto est = sample_mean(f);
    CHECK(std::abs(est.mean) <= 4.0 * est.se);

    // m = 1 with variance sigma^2 is exactly N(0, sigma^2);
    // one-sample Kolmogorov-Smirnov at the 1e-3 level.
    double sigma2 = 0.49;
    auto gauss = Measure{make_product(1.0, {sigma2})};
    size_t nk = 20000;
    auto gp = draw(gauss, 5u, nk);
    std::vector<double> xs(nk);
    for (size_t i = 0; i < nk; ++i) xs[i] = gp[i].coords[0];
    std::sort(xs.begin(), xs.end());
    double dks = 0.0;
    for (size_t i = 0; i < nk; ++i) {
        double cdf = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0 * sigma2));
        dks = std::max(dks, std::abs(cdf - (double)(i + 1) / (double)nk));
        dks = std::max(dks, std::abs(cdf - (double)i / (double)nk));
    }
    CHECK(dks <= 1.9495 / std::sqrt((double)nk));
}

TEST_CASE("integration by parts holds for every measure family") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5, 1.0 / 3.0, 0.25});
    std::vector<Measure> families;
    families.push_back(Measure{make_gaussian(space)});
    families.push_back(Measure{make_weighted_gaussian(
        space, quadratic_potential(0.6, std::vector<double>{1.0, 0.5, 1.5, 1.0}))});
    families.push_back(Measure{make_product(2.0, {0.7, 1.0, 1.3, 0.9})});

    auto probe = RngStream{31u, 7u}.at_sample(0);
    size_t n = 50000;
    for (size_t fam = 0; fam < families.size(); ++fam) {
        const auto& nu = families[fam];
        const auto& sp = nu.space();  // the product family reshapes R
        std::vector<double> logw;
        auto pts = draw(nu, 20u + (uint64_t)fam, n, &logw);
        std::vector<double> w(n);
        for (size_t i = 0; i < n; ++i) w[i] = std::exp(logw[i]);

        // phi == 1: the log derivative integrates to zero.
        {
            std::vector<double> f(n);
            std::vector<double> z{0.4, -0.3, 0.8, 0.1};
            for (size_t i = 0; i < n; ++i) f[i] = nu.v_z(pts[i], z);
            auto est = weighted_mean(f, w);
            CHECK(std::abs(est.mean) <= 4.0 * est.se);
        }

        for (int pair = 0; pair < 20; ++pair) {
            std::vector<double> zdir(4), wvec(4);
            for (auto& c : zdir) c = probe.next_normal();
            for (auto& c : wvec) c = 0.7 * probe.next_normal();
            double b = 0.5 * probe.next_normal();
            CylFunction phi = cyl_tanh_affine({0, 1, 2, 3}, wvec, b);
            std::vector<double> resid(n);
            for (size_t i = 0; i < n; ++i) {
                auto mg = stretched_gradient(sp, phi, pts[i]);
                double dz = 0.0;
                for (int k = 0; k < 4; ++k) dz += mg[(size_t)k] * zdir[(size_t)k];
                resid[i] = dz - nu.v_z(pts[i], zdir) * phi.value(pts[i]);
            }
            auto est = weighted_mean(resid, w);
            CHECK(std::abs(est.mean) <= 4.0 * est.se);
        }
    }
}

TEST_CASE("gaussian log-derivative variance equals the squared norm") {
    auto space = SpectralSpace::from_eigenvalues({1.0, 0.5, 2.0, 0.25});
    auto nu = Measure{make_gaussian(space)};
    std::vector<double> z{3.0, 4.0, 0.0, 0.0};
    size_t n = 200000;
    auto pts = draw(nu, 6u, n);
    std::vector<double> f(n);
    for (size_t i = 0; i < n; ++i) {
        double v = nu.v_z(pts[i], z);
        f[i] = v * v;
    }
    auto est = sample_mean(f);
    CHECK(std::abs(est.mean - 25.0) <= 4.0 * est.se);
    // Empirical L2 norm scales exactly linearly in z.
    for (double c : {2.0, 10.0}) {
        double acc = 0.0, accc = 0.0;
        std::vector<double> cz{c * 3.0, c * 4.0, 0.0, 0.0};
        for (size_t i = 0; i < n / 10; ++i) {
            double v = nu.v_z(pts[i], z), vc = nu.v_z(pts[i], cz);
            acc += v * v;
            accc += vc * vc;
        }
        CHECK(std::sqrt(accc) == doctest::Approx(c * std::sqrt(acc)).epsilon(1e-12));
    }
}

TEST_CASE("adjoint of the stretched derivative") {
    auto nu = Measure{make_gaussian(SpectralSpace::from_eigenvalues({1.0}))};
    CylFunction f = cyl_affine({0}, {1.0}, 0.0);
    Point x{{2.0}};
    CHECK(partial_star(nu, f, {1.0}, x) == doctest::Approx(-3.0).epsilon(1e-14));
    // f == 1 leaves only the log-derivative term.
    CylFunction c1 = cyl_constant(1.0);
    auto nu2 = Measure{make_gaussian(SpectralSpace::from_eigenvalues({1.0, 0.25}))};
    Point y{{0.5, -1.0}};
    CHECK(partial_star(nu2, c1, {1.0, 2.0}, y) ==
          doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("field divergences and their duality") {
    auto space = SpectralSpace::from_eigenvalues({4.0});
    auto nu = Measure{make_gaussian(space)};
    // Constant field with direction z: divergence reduces to v_z.
    CylField Fz{{{cyl_constant(1.0), {1.5}}}};
    Point x{{3.0}};
    CHECK(div_m_star(nu, Fz, x) == doctest::Approx(nu.v_z(x, {1.5})).epsilon(1e-14));

    // Pinned example for the plain-gradient divergence: y = (1), f = x_1.
    CylField Fy{{{cyl_affine({0}, {1.0}, 0.0), {1.0}}}};
    CHECK(div_nabla_star(nu, Fy, x) == doctest::Approx(1.25).epsilon(1e-14));

    // Consistency: the stretched divergence of (f, z) terms equals the plain
    // divergence of the same field with directions R z.
    auto space4 = SpectralSpace::from_eigenvalues({1.0, 0.5, 2.0, 0.25});
    auto nu4 = Measure{make_gaussian(space4)};
    auto g = RngStream{8u, 11u}.at_sample(0);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> z1(4), z2(4), wv(4);
        for (auto& c : z1) c = g.next_normal();
        for (auto& c : z2) c = g.next_normal();
        for (auto& c : wv) c = g.next_normal();
        CylField F{{{cyl_tanh_affine({0, 1, 2, 3}, wv, 0.1), z1},
                    {cyl_poly1(1, {0.0, 1.0, 0.3}), z2}}};
        CylField RF = F;
        for (auto& term : RF.terms)
            for (int k = 0; k < 4; ++k)
                term.second[(size_t)k] *= space4.r_diag[(size_t)k];
        Point p{{g.next_normal(), g.next_normal(), g.next_normal(), g.next_normal()}};
        CHECK(div_m_star(nu4, F, p) ==
              doctest::Approx(div_nabla_star(nu4, RF, p)).epsilon(1e-11));
    }

    // Monte Carlo duality: E[phi div(F)] = E[<M phi, F>].
    size_t n = 120000;
    auto pts = draw(nu4, 12u, n);
    std::vector<double> zdir{0.5, -0.4, 0.3, 0.2};
    CylField F{{{cyl_tanh_affine({0, 1, 2, 3}, {0.3, -0.2, 0.5, 0.1}, 0.2), zdir}}};
    CylFunction phi = cyl_tanh_affine({0, 1, 2, 3}, {-0.4, 0.3, 0.2, -0.1}, -0.3);
    std::vector<double> diff(n);
    for (size_t i = 0; i < n; ++i) {
        double lhs = phi.value(pts[i]) * div_m_star(nu4, F, pts[i]);
        auto mg = stretched_gradient(space4, phi, pts[i]);
        double rhs = 0.0;
        double fv = F.terms[0].first.value(pts[i]);
        for (int k = 0; k < 4; ++k) rhs += mg[(size_t)k] * zdir[(size_t)k] * fv;
        diff[i] = lhs - rhs;
    }
    auto est = sample_mean(diff);
    CHECK(std::abs(est.mean) <= 4.0 * est.se);
}

TEST_CASE("weighted measure: normalizer estimate and bound check") {
    auto space = SpectralSpace::from_eigenvalues({1.0});
    double kappa = 0.7;
    auto wg = make_weighted_gaussian(space, quadratic_potential(kappa, 1));
    auto est = wg.log_norm();
    double want = -0.5 * std::log(1.0 + 2.0 * kappa);
    CHECK(std::abs(est.value - want) <= 4.0 * est.std_err);
    // Cached: identical object on repeat calls.
    auto est2 = wg.log_norm();
    CHECK(est.value == est2.value);
    CHECK(est.n_samples == est2.n_samples);

    // A potential whose declared lower bound is violated is rejected.
    Potential lying = quadratic_potential(0.0, 1);
    lying.lower_bound = 5.0;
    CHECK_THROWS_AS(make_weighted_gaussian(space, lying), ArgumentError);

    // No closed-form covariance for weighted measures.
    auto nu = Measure{wg};
    CHECK_THROWS_AS(nu.covariance_diag(), CapabilityError);
}
