#include <bvcalc/cylinder.hpp>

#include <bvcalc/errors.hpp>

#include <algorithm>
#include <array>
#include <cmath>

namespace bvc {

namespace {

void check_active(const std::vector<int>& active) {
    if ((int)active.size() > kMaxCylArity)
        throw ArgumentError("cylindrical arity exceeds the supported maximum");
    for (size_t i = 0; i < active.size(); ++i) {
        if (active[i] < 0) throw ArgumentError("active index must be nonnegative");
        if (i > 0 && active[i] <= active[i - 1])
            throw ArgumentError("active indices must be sorted and unique");
    }
}

double horner(const std::vector<double>& c, double s) {
    double v = 0.0;
    for (size_t j = c.size(); j-- > 0;) v = v * s + c[j];
    return v;
}

std::vector<double> poly_derivative(const std::vector<double>& c) {
    std::vector<double> d;
    for (size_t j = 1; j < c.size(); ++j) d.push_back((double)j * c[j]);
    if (d.empty()) d.push_back(0.0);
    return d;
}

}  // namespace

CylFunction::CylFunction(std::vector<int> active, ValueFn value, GradFn grad,
                         HessFn hess, std::optional<double> sup_bound,
                         std::optional<double> grad_sup_bound)
    : active_(std::move(active)),
      value_(std::move(value)),
      grad_(std::move(grad)),
      hess_(std::move(hess)),
      sup_bound_(sup_bound),
      grad_sup_bound_(grad_sup_bound) {
    check_active(active_);
    if (!value_ || !grad_) throw ArgumentError("core must supply value and gradient");
}

void CylFunction::gather(const Point& x, std::span<double> u) const {
    for (size_t i = 0; i < active_.size(); ++i) {
        if (active_[i] >= x.dim())
            throw ArgumentError("active index outside the point dimension");
        u[i] = x.coords[(size_t)active_[i]];
    }
}

double CylFunction::value(const Point& x) const {
    std::array<double, kMaxCylArity> u;
    gather(x, {u.data(), active_.size()});
    return value_({u.data(), active_.size()});
}

void CylFunction::gradient_active(const Point& x, std::span<double> out) const {
    std::array<double, kMaxCylArity> u;
    gather(x, {u.data(), active_.size()});
    grad_({u.data(), active_.size()}, out);
}

void CylFunction::hessian_active(const Point& x, std::span<double> out) const {
    if (!hess_) throw CapabilityError("function has no Hessian");
    std::array<double, kMaxCylArity> u;
    gather(x, {u.data(), active_.size()});
    hess_({u.data(), active_.size()}, out);
}

void CylFunction::hessian_packed(std::span<const double> u,
                                 std::span<double> out) const {
    if (!hess_) throw CapabilityError("function has no Hessian");
    hess_(u, out);
}

// ---- factories --------------------------------------------------------------

CylFunction cyl_constant(double c) {
    return CylFunction(
        {}, [c](std::span<const double>) { return c; },
        [](std::span<const double>, std::span<double>) {},
        [](std::span<const double>, std::span<double>) {}, std::abs(c), 0.0);
}

CylFunction cyl_affine(std::vector<int> active, std::vector<double> w, double b) {
    if (w.size() != active.size()) throw ArgumentError("weight count mismatch");
    double wnorm = 0.0;
    for (double v : w) wnorm += v * v;
    wnorm = std::sqrt(wnorm);
    size_t m = w.size();
    return CylFunction(
        std::move(active),
        [w, b](std::span<const double> u) {
            double s = b;
            for (size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
            return s;
        },
        [w](std::span<const double>, std::span<double> g) {
            std::copy(w.begin(), w.end(), g.begin());
        },
        [m](std::span<const double>, std::span<double> h) {
            std::fill(h.begin(), h.begin() + (ptrdiff_t)(m * m), 0.0);
        },
        std::nullopt, wnorm);
}

CylFunction cyl_poly1(int index, std::vector<double> coeffs) {
    auto d1 = poly_derivative(coeffs);
    auto d2 = poly_derivative(d1);
    return CylFunction(
        {index},
        [coeffs](std::span<const double> u) { return horner(coeffs, u[0]); },
        [d1](std::span<const double> u, std::span<double> g) {
            g[0] = horner(d1, u[0]);
        },
        [d2](std::span<const double> u, std::span<double> h) {
            h[0] = horner(d2, u[0]);
        });
}

CylFunction cyl_tanh_affine(std::vector<int> active, std::vector<double> w,
                            double b) {
    if (w.size() != active.size()) throw ArgumentError("weight count mismatch");
    double wnorm = 0.0;
    for (double v : w) wnorm += v * v;
    wnorm = std::sqrt(wnorm);
    size_t m = w.size();
    return CylFunction(
        std::move(active),
        [w, b](std::span<const double> u) {
            double s = b;
            for (size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
            return std::tanh(s);
        },
        [w, b](std::span<const double> u, std::span<double> g) {
            double s = b;
            for (size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
            double t = std::tanh(s);
            double d = 1.0 - t * t;
            for (size_t i = 0; i < u.size(); ++i) g[i] = d * w[i];
        },
        [w, b, m](std::span<const double> u, std::span<double> h) {
            double s = b;
            for (size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
            double t = std::tanh(s);
            double d2 = -2.0 * t * (1.0 - t * t);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < m; ++j) h[i * m + j] = d2 * w[i] * w[j];
        },
        1.0, wnorm);
}

CylFunction cyl_radial_tanh(std::vector<int> active, double scale) {
    size_t m = active.size();
    return CylFunction(
        std::move(active),
        [scale](std::span<const double> u) {
            double q = 0.0;
            for (double v : u) q += v * v;
            return std::tanh(scale * q);
        },
        [scale](std::span<const double> u, std::span<double> g) {
            double q = 0.0;
            for (double v : u) q += v * v;
            double t = std::tanh(scale * q);
            double d = (1.0 - t * t) * 2.0 * scale;
            for (size_t i = 0; i < u.size(); ++i) g[i] = d * u[i];
        },
        [scale, m](std::span<const double> u, std::span<double> h) {
            double q = 0.0;
            for (double v : u) q += v * v;
            double t = std::tanh(scale * q);
            double d = 1.0 - t * t;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < m; ++j) {
                    double v = -8.0 * scale * scale * t * d * u[i] * u[j];
                    if (i == j) v += 2.0 * scale * d;
                    h[i * m + j] = v;
                }
        },
        1.0, std::nullopt);
}

CylFunction cyl_gauss_bump(std::vector<int> active, std::vector<double> center,
                           double a) {
    if (center.size() != active.size()) throw ArgumentError("center size mismatch");
    if (!(a > 0.0)) throw ArgumentError("bump width parameter must be positive");
    size_t m = center.size();
    // max of 2a sqrt(q) e^{-aq} over q >= 0 is sqrt(2a) e^{-1/2}.
    double gsup = std::sqrt(2.0 * a) * std::exp(-0.5);
    return CylFunction(
        std::move(active),
        [center, a](std::span<const double> u) {
            double q = 0.0;
            for (size_t i = 0; i < u.size(); ++i) {
                double d = u[i] - center[i];
                q += d * d;
            }
            return std::exp(-a * q);
        },
        [center, a](std::span<const double> u, std::span<double> g) {
            double q = 0.0;
            for (size_t i = 0; i < u.size(); ++i) {
                double d = u[i] - center[i];
                q += d * d;
            }
            double phi = std::exp(-a * q);
            for (size_t i = 0; i < u.size(); ++i)
                g[i] = -2.0 * a * (u[i] - center[i]) * phi;
        },
        [center, a, m](std::span<const double> u, std::span<double> h) {
            double q = 0.0;
            for (size_t i = 0; i < u.size(); ++i) {
                double d = u[i] - center[i];
                q += d * d;
            }
            double phi = std::exp(-a * q);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < m; ++j) {
                    double v = 4.0 * a * a * (u[i] - center[i]) * (u[j] - center[j]);
                    if (i == j) v -= 2.0 * a;
                    h[i * m + j] = v * phi;
                }
        },
        1.0, gsup);
}

CylFunction cyl_multiply(const CylFunction& f, const CylFunction& g) {
    std::vector<int> active = f.active_indices();
    active.insert(active.end(), g.active_indices().begin(), g.active_indices().end());
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());

    // Positions of each factor's active indices inside the union.
    auto positions = [&active](const std::vector<int>& sub) {
        std::vector<size_t> pos;
        for (int idx : sub)
            pos.push_back((size_t)(std::lower_bound(active.begin(), active.end(), idx) -
                                   active.begin()));
        return pos;
    };
    std::vector<size_t> pf = positions(f.active_indices());
    std::vector<size_t> pg = positions(g.active_indices());
    size_t m = active.size(), mf = pf.size(), mg = pg.size();

    auto pack = [](std::span<const double> u, const std::vector<size_t>& pos,
                   std::span<double> out) {
        for (size_t i = 0; i < pos.size(); ++i) out[i] = u[pos[i]];
    };

    CylFunction::ValueFn value = [f, g, pf, pg](std::span<const double> u) {
        std::array<double, kMaxCylArity> uf, ug;
        for (size_t i = 0; i < pf.size(); ++i) uf[i] = u[pf[i]];
        for (size_t i = 0; i < pg.size(); ++i) ug[i] = u[pg[i]];
        return f.value_packed({uf.data(), pf.size()}) *
               g.value_packed({ug.data(), pg.size()});
    };

    CylFunction::GradFn grad = [f, g, pf, pg, m, pack](std::span<const double> u,
                                                       std::span<double> out) {
        std::array<double, kMaxCylArity> uf, ug, gf, gg;
        pack(u, pf, {uf.data(), pf.size()});
        pack(u, pg, {ug.data(), pg.size()});
        double fv = f.value_packed({uf.data(), pf.size()});
        double gv = g.value_packed({ug.data(), pg.size()});
        f.gradient_packed({uf.data(), pf.size()}, {gf.data(), pf.size()});
        g.gradient_packed({ug.data(), pg.size()}, {gg.data(), pg.size()});
        std::fill(out.begin(), out.begin() + (ptrdiff_t)m, 0.0);
        for (size_t i = 0; i < pf.size(); ++i) out[pf[i]] += gv * gf[i];
        for (size_t i = 0; i < pg.size(); ++i) out[pg[i]] += fv * gg[i];
    };

    CylFunction::HessFn hess = nullptr;
    if (f.has_hessian() && g.has_hessian()) {
        // Capture by value; packed Hessians of the factors are scattered into
        // the union with the product rule.
        CylFunction fc = f, gc = g;
        hess = [fc, gc, pf, pg, m, mf, mg, pack](std::span<const double> u,
                                                 std::span<double> out) {
            std::array<double, kMaxCylArity> uf, ug, gf, gg;
            std::vector<double> hf(mf * mf), hg(mg * mg);
            pack(u, pf, {uf.data(), mf});
            pack(u, pg, {ug.data(), mg});
            double fv = fc.value_packed({uf.data(), mf});
            double gv = gc.value_packed({ug.data(), mg});
            fc.gradient_packed({uf.data(), mf}, {gf.data(), mf});
            gc.gradient_packed({ug.data(), mg}, {gg.data(), mg});
            fc.hessian_packed({uf.data(), mf}, hf);
            gc.hessian_packed({ug.data(), mg}, hg);
            std::fill(out.begin(), out.begin() + (ptrdiff_t)(m * m), 0.0);
            for (size_t i = 0; i < mf; ++i)
                for (size_t j = 0; j < mf; ++j)
                    out[pf[i] * m + pf[j]] += gv * hf[i * mf + j];
            for (size_t i = 0; i < mg; ++i)
                for (size_t j = 0; j < mg; ++j)
                    out[pg[i] * m + pg[j]] += fv * hg[i * mg + j];
            for (size_t i = 0; i < mf; ++i)
                for (size_t j = 0; j < mg; ++j) {
                    out[pf[i] * m + pg[j]] += gf[i] * gg[j];
                    out[pg[j] * m + pf[i]] += gf[i] * gg[j];
                }
        };
    }

    std::optional<double> sup, gsup;
    if (f.sup_bound() && g.sup_bound()) sup = *f.sup_bound() * *g.sup_bound();
    if (f.sup_bound() && g.sup_bound() && f.grad_sup_bound() && g.grad_sup_bound())
        gsup = *f.sup_bound() * *g.grad_sup_bound() +
               *g.sup_bound() * *f.grad_sup_bound();

    return CylFunction(std::move(active), std::move(value), std::move(grad),
                       std::move(hess), sup, gsup);
}

// ---- differential operators --------------------------------------------------

std::vector<double> stretched_gradient(const SpectralSpace& space,
                                       const CylFunction& f, const Point& x) {
    if (x.dim() != space.dim) throw ArgumentError("point dimension mismatch");
    std::vector<double> out((size_t)space.dim, 0.0);
    std::array<double, kMaxCylArity> g;
    f.gradient_active(x, {g.data(), (size_t)f.arity()});
    const auto& act = f.active_indices();
    for (size_t i = 0; i < act.size(); ++i) {
        if (act[i] >= space.dim) throw ArgumentError("active index outside space");
        out[(size_t)act[i]] = space.r_diag[(size_t)act[i]] * g[i];
    }
    return out;
}

std::vector<double> full_gradient(const SpectralSpace& space, const CylFunction& f,
                                  const Point& x) {
    if (x.dim() != space.dim) throw ArgumentError("point dimension mismatch");
    std::vector<double> out((size_t)space.dim, 0.0);
    std::array<double, kMaxCylArity> g;
    f.gradient_active(x, {g.data(), (size_t)f.arity()});
    const auto& act = f.active_indices();
    for (size_t i = 0; i < act.size(); ++i) {
        if (act[i] >= space.dim) throw ArgumentError("active index outside space");
        out[(size_t)act[i]] = g[i];
    }
    return out;
}

std::vector<double> stretched_hessian(const SpectralSpace& space,
                                      const CylFunction& f, const Point& x) {
    if (x.dim() != space.dim) throw ArgumentError("point dimension mismatch");
    size_t n = (size_t)space.dim;
    std::vector<double> out(n * n, 0.0);
    size_t m = (size_t)f.arity();
    std::vector<double> h(m * m);
    f.hessian_active(x, h);
    const auto& act = f.active_indices();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
            size_t a = (size_t)act[i], b = (size_t)act[j];
            out[a * n + b] = space.r_diag[a] * space.r_diag[b] * h[i * m + j];
        }
    return out;
}

// ---- functionals --------------------------------------------------------------

ScalarFunctional as_functional(const CylFunction& f, int dim) {
    SpectralSpace s = SpectralSpace::identity(dim);
    return ScalarFunctional{
        [f](const Point& x) { return f.value(x); },
        [f, s](const Point& x) { return full_gradient(s, f, x); }};
}

double smoothed_indicator_eval(const SmoothedIndicator& si, const Point& x) {
    if (!(si.eps > 0.0)) throw ArgumentError("cutoff width must be positive");
    double xi = si.g.value(x);
    if (xi <= si.r - si.eps) return 1.0;
    if (xi >= si.r) return 0.0;
    return -(xi - si.r) / si.eps;
}

std::vector<double> smoothed_indicator_gradient(const SmoothedIndicator& si,
                                                const Point& x) {
    if (!(si.eps > 0.0)) throw ArgumentError("cutoff width must be positive");
    double xi = si.g.value(x);
    if (xi <= si.r - si.eps || xi >= si.r)
        return std::vector<double>((size_t)x.dim(), 0.0);
    auto g = si.g.gradient(x);
    for (auto& v : g) v *= -1.0 / si.eps;
    return g;
}

}  // namespace bvc
