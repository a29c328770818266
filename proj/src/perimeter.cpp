#include <bvcalc/perimeter.hpp>

#include <bvcalc/errors.hpp>
#include <bvcalc/quadrature_rules.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace bvc {

namespace {

std::string num_str(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

McEstimate halfspace_perimeter(const Measure& nu, const Halfspace& h, GradientKind which,
                               const EvalEngine& engine) {
    int dim = nu.dim();
    if ((int)h.a.size() != dim)
        throw ArgumentError("halfspace normal must match the truncation dimension");
    bool nonzero = false;
    for (double c : h.a) nonzero = nonzero || c != 0.0;
    if (!nonzero) throw ArgumentError("halfspace normal must be nonzero");

    const auto& space = nu.space();
    std::vector<double> z(h.a);
    if (which == GradientKind::stretched)
        for (int k = 0; k < dim; ++k) z[(size_t)k] *= space.r_diag[(size_t)k];
    double zn = 0.0;
    for (double c : z) zn += c * c;
    zn = std::sqrt(zn);
    if (zn == 0.0) {
        McEstimate e;
        e.value = 0.0;
        e.std_err = 0.0;
        e.n_samples = 0;
        e.meta["mode"] = "degenerate_direction";
        return e;
    }
    auto a_ptr = std::make_shared<std::vector<double>>(h.a);
    auto z_ptr = std::make_shared<std::vector<double>>(std::move(z));
    double r = h.r;
    auto fn = [&nu, a_ptr, z_ptr, zn, r](const Point& x) {
        double s = 0.0;
        for (size_t k = 0; k < a_ptr->size(); ++k) s += (*a_ptr)[k] * x.coords[k];
        if (!(s < r)) return 0.0;
        return -nu.v_z(x, *z_ptr) / zn;
    };
    auto est = mc_integrate(fn, nu, engine.mc_samples, engine.rng, engine.workers);
    est.meta["mode"] = which == GradientKind::stretched ? "perimeter_m" : "perimeter_nabla";
    est.meta["r"] = num_str(r);
    return est;
}

SublevelResult sublevel_perimeter(const Measure& nu, const SublevelSet& s,
                                  const std::vector<double>& eps_grid,
                                  const EvalEngine& engine) {
    if (!s.g.value) throw ArgumentError("sublevel set needs a level function");
    if (!s.g.gradient) throw ArgumentError("sublevel set needs a level gradient");
    if (eps_grid.size() < 3) throw ArgumentError("eps grid needs at least three widths");
    for (double e : eps_grid)
        if (!(e > 0.0)) throw ArgumentError("eps grid must be positive");
    double ratio = eps_grid[1] / eps_grid[0];
    if (!(ratio < 1.0)) throw ArgumentError("eps grid must decrease");
    for (size_t i = 1; i + 1 < eps_grid.size(); ++i) {
        double rr = eps_grid[i + 1] / eps_grid[i];
        if (std::abs(rr - ratio) > 1e-9 * ratio)
            throw ArgumentError("eps grid must be geometric");
    }

    const auto& space = nu.space();
    SublevelResult out;
    out.eps_grid = eps_grid;
    double r = s.r;
    for (double eps : eps_grid) {
        // Shared seed across the widths: nested windows make the quotient
        // differences nearly monotone path by path.
        auto quot = mc_integrate(
            [&](const Point& x) {
                double gv = s.g.value(x);
                return (gv >= r - eps && gv < r) ? 1.0 / eps : 0.0;
            },
            nu, engine.mc_samples, engine.rng, engine.workers);
        quot.meta["mode"] = "window_quotient";
        quot.meta["eps"] = num_str(eps);
        out.quotients.push_back(std::move(quot));

        auto relax = mc_integrate(
            [&](const Point& x) {
                double gv = s.g.value(x);
                if (!(gv > r - eps && gv < r)) return 0.0;
                auto gr = s.g.gradient(x);
                double ss = 0.0;
                for (size_t k = 0; k < gr.size(); ++k) {
                    double c = space.r_diag[k] * gr[k];
                    if (!std::isfinite(c))
                        throw IntegrityError("non-finite level gradient in the window");
                    ss += c * c;
                }
                return std::sqrt(ss) / eps;
            },
            nu, engine.mc_samples, engine.rng, engine.workers);
        relax.meta["mode"] = "window_relaxation";
        relax.meta["eps"] = num_str(eps);
        out.relaxations.push_back(std::move(relax));
    }

    std::vector<double> vals;
    for (const auto& q : out.quotients) vals.push_back(q.value);
    out.extrapolation = richardson_limit(vals);
    out.stable =
        out.extrapolation.spread <= 0.05 * std::abs(out.extrapolation.limit) + 1e-12;
    return out;
}

ScalarFunctional lp_ball_functional(double p, const SpectralSpace& space, int quad_points) {
    if (!(p > 2.0)) throw ArgumentError("exponent must exceed 2");
    if (quad_points < 2 || quad_points > 256)
        throw ArgumentError("quadrature size out of range");
    int dim = space.dim;
    const QuadRule& rule = gauss_legendre_01(quad_points);
    // Basis table e_k(xi_j), row-major over nodes.
    auto table = std::make_shared<std::vector<double>>((size_t)quad_points * (size_t)dim);
    for (int j = 0; j < quad_points; ++j)
        for (int k = 0; k < dim; ++k)
            (*table)[(size_t)j * (size_t)dim + (size_t)k] =
                sine_basis(k + 1, rule.nodes[(size_t)j]);
    auto weights = std::make_shared<std::vector<double>>(rule.weights);

    ScalarFunctional F;
    F.value = [table, weights, p, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        double acc = 0.0;
        for (size_t j = 0; j < weights->size(); ++j) {
            double u = 0.0;
            const double* row = table->data() + j * (size_t)dim;
            for (int k = 0; k < dim; ++k) u += x.coords[(size_t)k] * row[k];
            acc += (*weights)[j] * std::pow(std::abs(u), p);
        }
        return acc;
    };
    F.gradient = [table, weights, p, dim](const Point& x) {
        if ((int)x.coords.size() != dim)
            throw ArgumentError("point dimension mismatch");
        std::vector<double> out((size_t)dim, 0.0);
        for (size_t j = 0; j < weights->size(); ++j) {
            double u = 0.0;
            const double* row = table->data() + j * (size_t)dim;
            for (int k = 0; k < dim; ++k) u += x.coords[(size_t)k] * row[k];
            if (u == 0.0) continue;
            double c = (*weights)[j] * p * std::pow(std::abs(u), p - 1.0) *
                       (u > 0.0 ? 1.0 : -1.0);
            for (int k = 0; k < dim; ++k) out[(size_t)k] += c * row[k];
        }
        return out;
    };
    return F;
}

}  // namespace bvc
