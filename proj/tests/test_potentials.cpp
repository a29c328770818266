#include <doctest.h>

#include <bvcalc/errors.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/rng.hpp>
#include <bvcalc/spectral.hpp>

#include <cmath>
#include <vector>

using namespace bvc;

namespace {

Point random_point(int dim, uint32_t tag, double scale = 1.0) {
    auto g = RngStream{2718u, 50u}.at_sample(tag);
    Point x;
    x.coords.resize((size_t)dim);
    for (auto& c : x.coords) c = scale * g.next_normal();
    return x;
}

// Composite Simpson on [0,1]; independent of the library's quadrature.
double simpson01(const std::function<double(double)>& f, int panels = 2000) {
    double h = 1.0 / panels, s = f(0.0) + f(1.0);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
    return s * h / 3.0;
}

// Scalar resolvent by pure bisection; independent prox oracle.
double bisect_resolvent(const std::function<double(double)>& f, double alpha,
                        double s) {
    auto psi = [&](double r) { return r + alpha * f(r) - s; };
    double lo = s, hi = s, step = 1.0 + std::abs(s);
    while (psi(lo) > 0) lo -= step, step *= 2;
    step = 1.0 + std::abs(s);
    while (psi(hi) < 0) hi += step, step *= 2;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (psi(mid) <= 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double cube(double s) { return s * s * s; }

}  // namespace

TEST_CASE("scalar nonlinearity: derivative and primitive are consistent") {
    auto nl = make_nonlinearity({0.0, 0.0, 0.0, 1.0});  // f(s) = s^3
    CHECK(nl.degree() == 3);
    CHECK(nl.f(2.0) == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(nl.fprime(2.0) == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(nl.Phi(2.0) == doctest::Approx(4.0).epsilon(1e-14));  // s^4/4
    // Phi' = f to 1e-10 via central differences.
    for (double s : {-1.5, -0.3, 0.0, 0.7, 2.2}) {
        double h = 1e-5;
        double fd = (nl.Phi(s + h) - nl.Phi(s - h)) / (2 * h);
        CHECK(std::abs(fd - nl.f(s)) <= 1e-9 * (1.0 + std::abs(nl.f(s))));
    }
    // f' >= 0 on a probe grid.
    for (double s = -10.0; s <= 10.0; s += 0.25) CHECK(nl.fprime(s) >= 0.0);

    CHECK_THROWS_AS(make_nonlinearity({1.0, 2.0}), ArgumentError);   // degree 1
    CHECK_THROWS_AS(make_nonlinearity({0.0, 0.0, 1.0}), ArgumentError);  // s^2 not increasing
}

TEST_CASE("integral potential on the sine basis: quadrature oracles") {
    auto space = SpectralSpace::dirichlet_half_inverse(4);

    // Linear scalar map f(s) = 2s (primitive s^2) exercises orthonormality:
    // U(c e_1) = c^2 and grad U(c e_1) = 2 c e_1.
    ScalarNonlinearity lin{{0.0, 2.0}};
    auto U = reaction_diffusion_potential(lin, space, 256);

    Point zero{{0.0, 0.0, 0.0, 0.0}};
    CHECK(U.value(zero) == doctest::Approx(0.0).epsilon(1e-14));

    double c = 1.7;
    Point ce1{{c, 0.0, 0.0, 0.0}};
    CHECK(std::abs(U.value(ce1) - c * c) <= 1e-8);
    auto g = U.gradient(ce1);
    CHECK(std::abs(g[0] - 2.0 * c) <= 1e-8);
    for (int k = 1; k < 4; ++k) CHECK(std::abs(g[(size_t)k]) <= 1e-8);

    // Hessian-vector product for linear f is 2h.
    std::vector<double> h{0.3, -0.2, 0.5, 0.1};
    auto Hh = U.hessian_vec(ce1, h);
    for (int k = 0; k < 4; ++k)
        CHECK(std::abs(Hh[(size_t)k] - 2.0 * h[(size_t)k]) <= 1e-8);

    CHECK_THROWS_AS(reaction_diffusion_potential(lin, space, 32), ArgumentError);
}

TEST_CASE("second-derivative entries respect the scalar-derivative budget") {
    auto space = SpectralSpace::dirichlet_half_inverse(6);
    auto nl = make_nonlinearity({0.0, 0.0, 0.0, 1.0});
    auto U = reaction_diffusion_potential(nl, space, 256);
    for (uint32_t probe = 0; probe < 5; ++probe) {
        Point x = random_point(6, 600 + probe, 0.5);
        auto xval = [&](double xi) {
            double s = 0.0;
            for (int k = 0; k < 6; ++k) s += x.coords[(size_t)k] * sine_basis(k + 1, xi);
            return s;
        };
        // sup|e_k| = sqrt(2), so each entry is bounded by 2 * integral of |f'|.
        double budget = 2.0 * simpson01([&](double xi) {
            return std::abs(3.0 * xval(xi) * xval(xi));
        });
        for (int j = 0; j < 6; ++j) {
            std::vector<double> ej((size_t)6, 0.0);
            ej[(size_t)j] = 1.0;
            auto col = U.hessian_vec(x, ej);
            for (int k = 0; k < 6; ++k)
                CHECK(std::abs(col[(size_t)k]) <= budget * (1.0 + 1e-6) + 1e-12);
        }
    }
}

TEST_CASE("inf-convolution of a quadratic has the closed form") {
    for (double alpha : {1.0, 0.1}) {
        auto U = quadratic_potential(1.0, 1);
        auto Ua = moreau_yosida(U, alpha);
        Point x{{2.0}};
        CHECK(std::abs(Ua.value(x) - 4.0 / (2.0 * (1.0 + alpha))) <= 1e-10);
        CHECK(std::abs(Ua.gradient(x)[0] - 2.0 / (1.0 + alpha)) <= 1e-8);
        REQUIRE(Ua.lip_grad.has_value());
        CHECK(*Ua.lip_grad == doctest::Approx(std::min(1.0 / alpha, 1.0)));
    }
    // Anisotropic diagonal case, envelope decouples per coordinate.
    auto U = quadratic_potential(0.7, std::vector<double>{1.0, 2.0, 0.5});
    double alpha = 0.3;
    auto Ua = moreau_yosida(U, alpha);
    Point x{{1.0, -2.0, 0.4}};
    double expect = 0.0;
    std::vector<double> s{1.0, 2.0, 0.5};
    for (int k = 0; k < 3; ++k) {
        double kap = 0.7 * s[(size_t)k];
        double xv = x.coords[(size_t)k];
        expect += 0.5 * kap * xv * xv / (1.0 + alpha * kap);
    }
    CHECK(std::abs(Ua.value(x) - expect) <= 1e-9);
    for (int k = 0; k < 3; ++k) {
        double kap = 0.7 * s[(size_t)k];
        CHECK(std::abs(Ua.gradient(x)[(size_t)k] -
                       kap * x.coords[(size_t)k] / (1.0 + alpha * kap)) <= 1e-8);
    }
}

TEST_CASE("envelope family is monotone in alpha and below the potential") {
    auto space = SpectralSpace::dirichlet_half_inverse(4);
    auto nl = make_nonlinearity({0.0, 0.0, 0.0, 1.0});
    std::vector<Potential> pots;
    pots.push_back(reaction_diffusion_potential(nl, space, 256));
    pots.push_back(quadratic_potential(0.5, 4));
    for (const auto& U : pots) {
        auto U1 = moreau_yosida(U, 1.0);
        auto U01 = moreau_yosida(U, 0.1);
        auto U001 = moreau_yosida(U, 0.01);
        for (uint32_t probe = 0; probe < 10; ++probe) {
            Point x = random_point(4, 700 + probe);
            double v = U.value(x);
            double v1 = U1.value(x), v01 = U01.value(x), v001 = U001.value(x);
            CHECK(v1 <= v01 + 1e-10);
            CHECK(v01 <= v001 + 1e-10);
            CHECK(v001 <= v + 1e-10);
        }
    }
}

TEST_CASE("envelope gradient is Lipschitz with the advertised constant") {
    auto U = quadratic_potential(3.0, 2);  // L = 3
    for (double alpha : {1.0, 0.05}) {
        auto Ua = moreau_yosida(U, alpha);
        double bound = std::min(1.0 / alpha, 3.0);
        for (uint32_t probe = 0; probe < 10; ++probe) {
            Point x = random_point(2, 800 + probe);
            Point y = random_point(2, 900 + probe);
            auto gx = Ua.gradient(x), gy = Ua.gradient(y);
            double dg = 0.0, dx = 0.0;
            for (int k = 0; k < 2; ++k) {
                dg += (gx[(size_t)k] - gy[(size_t)k]) * (gx[(size_t)k] - gy[(size_t)k]);
                dx += (x.coords[(size_t)k] - y.coords[(size_t)k]) *
                      (x.coords[(size_t)k] - y.coords[(size_t)k]);
            }
            CHECK(std::sqrt(dg) <= bound * std::sqrt(dx) * (1.0 + 1e-8) + 1e-10);
        }
    }
}

TEST_CASE("scalar resolvent map") {
    auto nl = make_nonlinearity({0.0, 0.0, 0.0, 1.0});
    // r + r^3 = 2 has root 1, so the map sends 2 to f(1) = 1.
    CHECK(std::abs(yosida_scalar(nl, 1.0, 2.0) - 1.0) <= 1e-10);
    // Small alpha recovers f.
    for (double s : {-2.0, -0.5, 0.3, 1.8}) {
        double fa = yosida_scalar(nl, 1e-6, s);
        CHECK(std::abs(fa - nl.f(s)) <= 1e-4 * (1.0 + std::abs(nl.f(s))));
    }
    // Nondecreasing in s on a grid.
    double prev = yosida_scalar(nl, 0.5, -3.0);
    for (double s = -3.0 + 0.05; s <= 3.0; s += 0.05) {
        double cur = yosida_scalar(nl, 0.5, s);
        CHECK(cur >= prev - 1e-12);
        prev = cur;
    }
}

TEST_CASE("envelope of the integral potential acts through the scalar map") {
    auto space = SpectralSpace::dirichlet_half_inverse(4);
    auto nl = make_nonlinearity({0.0, 0.0, 0.0, 1.0});
    auto U = reaction_diffusion_potential(nl, space, 256);
    double alpha = 0.2;
    auto Ua = moreau_yosida(U, alpha);

    for (uint32_t probe = 0; probe < 5; ++probe) {
        Point x = random_point(4, 1000 + probe);
        auto xval = [&](double xi) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += x.coords[(size_t)k] * sine_basis(k + 1, xi);
            return s;
        };
        // Independent oracle: coefficients of f_alpha(x(.)) by bisection prox
        // and Simpson quadrature.
        auto g = Ua.gradient(x);
        for (int k = 0; k < 4; ++k) {
            double want = simpson01([&](double xi) {
                double r = bisect_resolvent(cube, alpha, xval(xi));
                return cube(r) * sine_basis(k + 1, xi);
            });
            CHECK(std::abs(g[(size_t)k] - want) <= 1e-7 * (1.0 + std::abs(want)));
        }
        // Value against the scalar envelope integrand.
        double want_v = simpson01([&](double xi) {
            double s = xval(xi);
            double r = bisect_resolvent(cube, alpha, s);
            return 0.25 * r * r * r * r + (s - r) * (s - r) / (2.0 * alpha);
        });
        CHECK(std::abs(Ua.value(x) - want_v) <= 1e-7 * (1.0 + std::abs(want_v)));
    }
}

TEST_CASE("gradients of every potential kind match finite differences") {
    auto space = SpectralSpace::dirichlet_half_inverse(4);
    auto nl = make_nonlinearity({0.0, 1.0, 0.0, 0.5});
    std::vector<Potential> pots;
    pots.push_back(reaction_diffusion_potential(nl, space, 256));
    pots.push_back(quadratic_potential(0.8, std::vector<double>{1.0, 0.5, 2.0, 1.5}));
    pots.push_back(custom_polynomial_potential({{0, 0.5, 4}, {2, 1.0, 2}}, 4));
    pots.push_back(moreau_yosida(quadratic_potential(0.8, 4), 0.3));
    for (const auto& U : pots) {
        for (uint32_t probe = 0; probe < 6; ++probe) {
            Point x = random_point(4, 1100 + probe);
            auto g = U.gradient(x);
            for (int k = 0; k < 4; ++k) {
                double h = 1e-5 * (1.0 + std::abs(x.coords[(size_t)k]));
                Point xp = x, xm = x;
                xp.coords[(size_t)k] += h;
                xm.coords[(size_t)k] -= h;
                double fd = (U.value(xp) - U.value(xm)) / (2 * h);
                CHECK(std::abs(g[(size_t)k] - fd) <= 1e-5 * (1.0 + std::abs(fd)));
            }
        }
    }
}
