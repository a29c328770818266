#include <bvcalc/errors.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/quadrature_rules.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace bvc {

double ScalarNonlinearity::f(double s) const {
    double acc = 0.0;
    for (size_t j = coeffs.size(); j-- > 0;) acc = acc * s + coeffs[j];
    return acc;
}

double ScalarNonlinearity::fprime(double s) const {
    double acc = 0.0;
    for (size_t j = coeffs.size(); j-- > 1;) acc = acc * s + (double)j * coeffs[j];
    return acc;
}

double ScalarNonlinearity::Phi(double s) const {
    double acc = 0.0;
    for (size_t j = coeffs.size(); j-- > 0;)
        acc = acc * s + coeffs[j] / (double)(j + 1);
    return acc * s;
}

int ScalarNonlinearity::degree() const {
    for (size_t j = coeffs.size(); j-- > 0;)
        if (coeffs[j] != 0.0) return (int)j;
    return 0;
}

ScalarNonlinearity make_nonlinearity(std::vector<double> coeffs) {
    ScalarNonlinearity nl{std::move(coeffs)};
    int d = nl.degree();
    if (d <= 1) throw ArgumentError("nonlinearity degree must exceed 1");
    // Strict monotonicity: the derivative must have even degree, positive
    // leading coefficient, and stay nonnegative on a wide probe grid.
    int dp = d - 1;
    if (dp % 2 != 0 || (double)d * nl.coeffs[(size_t)d] <= 0.0)
        throw ArgumentError("nonlinearity must be strictly increasing");
    for (double s = -100.0; s <= 100.0; s += 0.05)
        if (nl.fprime(s) < -1e-12)
            throw ArgumentError("nonlinearity must be strictly increasing");
    return nl;
}

double RdGrid::profile(const Point& x, int j) const {
    if ((int)x.coords.size() != dim)
        throw ArgumentError("point dimension mismatch");
    const double* row = basis.data() + (size_t)j * (size_t)dim;
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += row[k] * x.coords[(size_t)k];
    return s;
}

namespace {

Potential profile_potential(std::shared_ptr<const RdGrid> grid, ScalarMaps maps,
                            double lower_bound, std::optional<double> lip) {
    auto rd = std::make_shared<RdStructure>(RdStructure{grid, std::move(maps)});
    Potential P;
    P.dim = grid->dim;
    P.rd = rd;
    P.lower_bound = lower_bound;
    P.lip_grad = lip;
    P.convex = true;
    P.value = [rd](const Point& x) {
        const auto& g = *rd->grid;
        double acc = 0.0;
        for (int j = 0; j < (int)g.nodes.size(); ++j)
            acc += g.weights[(size_t)j] * rd->maps.phi(g.profile(x, j));
        return acc;
    };
    P.gradient = [rd](const Point& x) {
        const auto& g = *rd->grid;
        std::vector<double> out((size_t)g.dim, 0.0);
        for (int j = 0; j < (int)g.nodes.size(); ++j) {
            double c = g.weights[(size_t)j] * rd->maps.g(g.profile(x, j));
            const double* row = g.basis.data() + (size_t)j * (size_t)g.dim;
            for (int k = 0; k < g.dim; ++k) out[(size_t)k] += c * row[k];
        }
        return out;
    };
    P.hessian_vec = [rd](const Point& x, const std::vector<double>& h) {
        const auto& g = *rd->grid;
        if ((int)h.size() != g.dim)
            throw ArgumentError("direction dimension mismatch");
        std::vector<double> out((size_t)g.dim, 0.0);
        for (int j = 0; j < (int)g.nodes.size(); ++j) {
            const double* row = g.basis.data() + (size_t)j * (size_t)g.dim;
            double hj = 0.0;
            for (int k = 0; k < g.dim; ++k) hj += row[k] * h[(size_t)k];
            double c = g.weights[(size_t)j] * rd->maps.gprime(g.profile(x, j)) * hj;
            for (int k = 0; k < g.dim; ++k) out[(size_t)k] += c * row[k];
        }
        return out;
    };
    return P;
}

// Root of a nondecreasing map by bracket expansion plus bisection.
double increasing_root(const std::function<double(double)>& g) {
    double lo = -1.0, hi = 1.0;
    for (int i = 0; i < 200 && g(lo) > 0.0; ++i) lo *= 2.0;
    for (int i = 0; i < 200 && g(hi) < 0.0; ++i) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (g(mid) <= 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

Potential reaction_diffusion_potential(const ScalarNonlinearity& nl,
                                       const SpectralSpace& space,
                                       int quad_points) {
    if (quad_points < 64)
        throw ArgumentError("reaction_diffusion_potential needs quad_points >= 64");
    const QuadRule& rule = gauss_legendre_01(quad_points);
    auto grid = std::make_shared<RdGrid>();
    grid->nodes = rule.nodes;
    grid->weights = rule.weights;
    grid->dim = space.dim;
    grid->basis.resize(rule.nodes.size() * (size_t)space.dim);
    for (size_t j = 0; j < rule.nodes.size(); ++j)
        for (int k = 0; k < space.dim; ++k)
            grid->basis[j * (size_t)space.dim + (size_t)k] =
                sine_basis(k + 1, rule.nodes[j]);

    ScalarMaps maps;
    maps.phi = [nl](double s) { return nl.Phi(s); };
    maps.g = [nl](double s) { return nl.f(s); };
    maps.gprime = [nl](double s) { return nl.fprime(s); };

    double root = increasing_root([&nl](double s) { return nl.f(s); });
    double lb = nl.Phi(root);
    // A linear profile map has constant curvature; higher degrees do not
    // admit a global gradient Lipschitz constant.
    std::optional<double> lip;
    if (nl.degree() <= 1 && nl.coeffs.size() > 1)
        lip = std::abs(nl.coeffs[1]);
    return profile_potential(std::move(grid), std::move(maps), lb, lip);
}

Potential quadratic_potential(double kappa, std::vector<double> s_diag) {
    if (kappa < 0.0) throw ArgumentError("quadratic potential needs kappa >= 0");
    for (double s : s_diag)
        if (!(s >= 0.0) || !std::isfinite(s))
            throw ArgumentError("quadratic potential needs nonnegative scales");
    auto s = std::make_shared<const std::vector<double>>(std::move(s_diag));
    int dim = (int)s->size();
    Potential P;
    P.dim = dim;
    P.convex = true;
    P.lower_bound = 0.0;
    double smax = s->empty() ? 0.0 : *std::max_element(s->begin(), s->end());
    P.lip_grad = kappa * smax;
    P.value = [s, kappa, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        double acc = 0.0;
        for (int k = 0; k < dim; ++k)
            acc += (*s)[(size_t)k] * x.coords[(size_t)k] * x.coords[(size_t)k];
        return 0.5 * kappa * acc;
    };
    P.gradient = [s, kappa, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        std::vector<double> out((size_t)dim);
        for (int k = 0; k < dim; ++k)
            out[(size_t)k] = kappa * (*s)[(size_t)k] * x.coords[(size_t)k];
        return out;
    };
    P.hessian_vec = [s, kappa, dim](const Point&, const std::vector<double>& h) {
        if ((int)h.size() != dim)
            throw ArgumentError("direction dimension mismatch");
        std::vector<double> out((size_t)dim);
        for (int k = 0; k < dim; ++k)
            out[(size_t)k] = kappa * (*s)[(size_t)k] * h[(size_t)k];
        return out;
    };
    return P;
}

Potential quadratic_potential(double kappa, int dim) {
    if (dim <= 0) throw ArgumentError("dimension must be positive");
    return quadratic_potential(kappa, std::vector<double>((size_t)dim, 1.0));
}

Potential custom_polynomial_potential(const std::vector<CoordMonomial>& terms,
                                      int dim) {
    if (dim <= 0) throw ArgumentError("dimension must be positive");
    for (const auto& t : terms) {
        if (t.index < 0 || t.index >= dim)
            throw ArgumentError("monomial index out of range");
        if (t.coeff < 0.0)
            throw ArgumentError("monomial coefficients must be nonnegative");
        if (t.power < 2 || t.power % 2 != 0)
            throw ArgumentError("monomial powers must be even and at least 2");
    }
    auto ts = std::make_shared<const std::vector<CoordMonomial>>(terms);
    Potential P;
    P.dim = dim;
    P.convex = true;
    P.lower_bound = 0.0;
    bool all_quadratic = true;
    std::vector<double> diag((size_t)dim, 0.0);
    for (const auto& t : terms) {
        if (t.power != 2) all_quadratic = false;
        else diag[(size_t)t.index] += 2.0 * t.coeff;
    }
    if (all_quadratic)
        P.lip_grad = diag.empty() ? 0.0 : *std::max_element(diag.begin(), diag.end());
    P.value = [ts, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        double acc = 0.0;
        for (const auto& t : *ts)
            acc += t.coeff * std::pow(x.coords[(size_t)t.index], t.power);
        return acc;
    };
    P.gradient = [ts, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        std::vector<double> out((size_t)dim, 0.0);
        for (const auto& t : *ts)
            out[(size_t)t.index] += t.coeff * t.power *
                                    std::pow(x.coords[(size_t)t.index], t.power - 1);
        return out;
    };
    P.hessian_vec = [ts, dim](const Point& x, const std::vector<double>& h) {
        if ((int)h.size() != dim)
            throw ArgumentError("direction dimension mismatch");
        std::vector<double> out((size_t)dim, 0.0);
        for (const auto& t : *ts)
            out[(size_t)t.index] += t.coeff * t.power * (t.power - 1) *
                                    std::pow(x.coords[(size_t)t.index], t.power - 2) *
                                    h[(size_t)t.index];
        return out;
    };
    return P;
}

double scalar_resolvent(const std::function<double(double)>& g,
                        const std::function<double(double)>& gprime,
                        double alpha, double s) {
    if (!(alpha > 0.0)) throw ArgumentError("resolvent parameter must be positive");
    auto psi = [&](double r) { return r + alpha * g(r) - s; };
    double lo = s, hi = s;
    double step = 1.0 + std::abs(s);
    int guard = 0;
    while (psi(lo) > 0.0) {
        lo -= step;
        step *= 2.0;
        if (++guard > 200) throw NumericError("resolvent bracket expansion failed");
    }
    step = 1.0 + std::abs(s);
    guard = 0;
    while (psi(hi) < 0.0) {
        hi += step;
        step *= 2.0;
        if (++guard > 200) throw NumericError("resolvent bracket expansion failed");
    }
    double r = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        double p = psi(r);
        if (std::abs(p) <= 1e-14 * (1.0 + std::abs(s))) return r;
        (p <= 0.0 ? lo : hi) = r;
        double dp = 1.0 + alpha * gprime(r);
        double rn = r - p / dp;
        if (!(rn > lo) || !(rn < hi)) rn = 0.5 * (lo + hi);
        if (std::abs(rn - r) <= 1e-16 * (1.0 + std::abs(r))) return rn;
        r = rn;
    }
    return r;
}

double yosida_scalar(const ScalarNonlinearity& nl, double alpha, double s) {
    double r = scalar_resolvent([&nl](double t) { return nl.f(t); },
                                [&nl](double t) { return nl.fprime(t); }, alpha, s);
    return nl.f(r);
}

namespace {

// Proximal point of U at x: minimizes U(y) + |x - y|^2 / (2 alpha) by damped
// Newton (conjugate-gradient inner solves) with a gradient-step fallback.
std::vector<double> prox_point(const Potential& U, const Point& x, double alpha) {
    int n = (int)x.coords.size();
    if (U.dim != 0 && U.dim != n) throw ArgumentError("point dimension mismatch");
    std::vector<double> y = x.coords;
    double xnorm = 0.0;
    for (double c : x.coords) xnorm += c * c;
    xnorm = std::sqrt(xnorm);
    auto objective = [&](const std::vector<double>& yv) {
        double d2 = 0.0;
        for (int k = 0; k < n; ++k) {
            double d = yv[(size_t)k] - x.coords[(size_t)k];
            d2 += d * d;
        }
        return U.value(Point{yv}) + d2 / (2.0 * alpha);
    };
    double tol = 1e-12 * (1.0 + xnorm) / alpha + 1e-14;
    for (int it = 0; it < 200; ++it) {
        auto g = U.gradient(Point{y});
        for (int k = 0; k < n; ++k)
            g[(size_t)k] += (y[(size_t)k] - x.coords[(size_t)k]) / alpha;
        double gn = 0.0;
        for (double v : g) gn += v * v;
        gn = std::sqrt(gn);
        if (gn <= tol) return y;

        std::vector<double> d((size_t)n);
        if (U.hessian_vec) {
            // CG on (D^2 U(y) + I/alpha) d = -g; the operator is positive
            // definite for convex U.
            Point yp{y};
            std::vector<double> r = g, p = r, Ap((size_t)n);
            for (auto& v : d) v = 0.0;
            double rs = 0.0;
            for (double v : r) rs += v * v;
            double rs0 = rs;
            for (int cg = 0; cg < 8 * n && rs > 1e-28 * (rs0 + 1e-300); ++cg) {
                Ap = U.hessian_vec(yp, p);
                for (int k = 0; k < n; ++k) Ap[(size_t)k] += p[(size_t)k] / alpha;
                double pAp = 0.0;
                for (int k = 0; k < n; ++k) pAp += p[(size_t)k] * Ap[(size_t)k];
                if (!(pAp > 0.0)) break;
                double a = rs / pAp;
                for (int k = 0; k < n; ++k) {
                    d[(size_t)k] += a * p[(size_t)k];
                    r[(size_t)k] -= a * Ap[(size_t)k];
                }
                double rs_new = 0.0;
                for (double v : r) rs_new += v * v;
                for (int k = 0; k < n; ++k)
                    p[(size_t)k] = r[(size_t)k] + (rs_new / rs) * p[(size_t)k];
                rs = rs_new;
            }
            for (auto& v : d) v = -v;
        } else {
            for (int k = 0; k < n; ++k) d[(size_t)k] = -alpha * g[(size_t)k];
        }

        double gd = 0.0;
        for (int k = 0; k < n; ++k) gd += g[(size_t)k] * d[(size_t)k];
        if (!(gd < 0.0)) {
            for (int k = 0; k < n; ++k) d[(size_t)k] = -alpha * g[(size_t)k];
            gd = 0.0;
            for (int k = 0; k < n; ++k) gd += g[(size_t)k] * d[(size_t)k];
        }
        double f0 = objective(y);
        double t = 1.0;
        std::vector<double> yt((size_t)n);
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            for (int k = 0; k < n; ++k) yt[(size_t)k] = y[(size_t)k] + t * d[(size_t)k];
            if (objective(yt) <= f0 + 1e-4 * t * gd) {
                y = yt;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) throw NumericError("proximal line search stalled");
    }
    throw NumericError("proximal solve did not converge");
}

}  // namespace

Potential moreau_yosida(const Potential& U, double alpha) {
    if (!(alpha > 0.0)) throw ArgumentError("envelope parameter must be positive");
    if (U.rd) {
        auto base = U.rd->maps;
        ScalarMaps maps;
        maps.g = [base, alpha](double s) {
            return base.g(scalar_resolvent(base.g, base.gprime, alpha, s));
        };
        maps.gprime = [base, alpha](double s) {
            double r = scalar_resolvent(base.g, base.gprime, alpha, s);
            double gp = base.gprime(r);
            return gp / (1.0 + alpha * gp);
        };
        maps.phi = [base, alpha](double s) {
            double r = scalar_resolvent(base.g, base.gprime, alpha, s);
            return base.phi(r) + (s - r) * (s - r) / (2.0 * alpha);
        };
        std::optional<double> lip = 1.0 / alpha;
        if (U.lip_grad) lip = std::min(*lip, *U.lip_grad);
        return profile_potential(U.rd->grid, std::move(maps), U.lower_bound, lip);
    }

    auto base = std::make_shared<const Potential>(U);
    Potential P;
    P.dim = U.dim;
    P.convex = U.convex;
    P.lower_bound = U.lower_bound;
    P.lip_grad = U.lip_grad ? std::min(1.0 / alpha, *U.lip_grad) : 1.0 / alpha;
    P.value = [base, alpha](const Point& x) {
        auto y = prox_point(*base, x, alpha);
        double d2 = 0.0;
        for (size_t k = 0; k < y.size(); ++k) {
            double d = x.coords[k] - y[k];
            d2 += d * d;
        }
        return base->value(Point{y}) + d2 / (2.0 * alpha);
    };
    P.gradient = [base, alpha](const Point& x) {
        auto y = prox_point(*base, x, alpha);
        std::vector<double> out(y.size());
        for (size_t k = 0; k < y.size(); ++k)
            out[k] = (x.coords[k] - y[k]) / alpha;
        return out;
    };
    if (U.hessian_vec) {
        P.hessian_vec = [base, alpha](const Point& x, const std::vector<double>& v) {
            auto y = prox_point(*base, x, alpha);
            Point yp{y};
            size_t n = y.size();
            if (v.size() != n) throw ArgumentError("direction dimension mismatch");
            // Solve (I + alpha D^2 U(y)) w = v by CG, then (v - w) / alpha.
            std::vector<double> w(n, 0.0), r = v, p = r, Ap(n);
            double rs = 0.0;
            for (double q : r) rs += q * q;
            double rs0 = rs;
            for (int cg = 0; cg < 8 * (int)n && rs > 1e-28 * (rs0 + 1e-300); ++cg) {
                Ap = base->hessian_vec(yp, p);
                for (size_t k = 0; k < n; ++k) Ap[k] = p[k] + alpha * Ap[k];
                double pAp = 0.0;
                for (size_t k = 0; k < n; ++k) pAp += p[k] * Ap[k];
                if (!(pAp > 0.0)) break;
                double a = rs / pAp;
                for (size_t k = 0; k < n; ++k) {
                    w[k] += a * p[k];
                    r[k] -= a * Ap[k];
                }
                double rs_new = 0.0;
                for (double q : r) rs_new += q * q;
                for (size_t k = 0; k < n; ++k) p[k] = r[k] + (rs_new / rs) * p[k];
                rs = rs_new;
            }
            std::vector<double> out(n);
            for (size_t k = 0; k < n; ++k) out[k] = (v[k] - w[k]) / alpha;
            return out;
        };
    }
    return P;
}

}  // namespace bvc
