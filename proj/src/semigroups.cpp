#include <bvcalc/semigroups.hpp>

#include <bvcalc/errors.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/quadrature_rules.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

namespace bvc {

namespace {

constexpr double kBlowupGuard = 1e8;

std::string num_str(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t mix_stream(uint64_t base, uint64_t tag) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (tag + 0x632be59bd9b4e019ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct Welford {
    uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v) {
        ++n;
        double d = v - mean;
        mean += d / (double)n;
        m2 += d * (v - mean);
    }
    double std_err() const {
        if (n < 2) return 0.0;
        return std::sqrt(std::max(0.0, m2) / (double)(n - 1) / (double)n);
    }
};

// Mean factor and noise spread per active coordinate of a Gaussian kernel.
struct KernelCoef {
    std::vector<double> c;
    std::vector<double> tau;
};

KernelCoef kernel_coefs(const SpectralSpace& sp, const std::vector<int>& active,
                        double t, bool classical) {
    KernelCoef kc;
    kc.c.reserve(active.size());
    kc.tau.reserve(active.size());
    for (int idx : active) {
        double lam = sp.eigenvalues[(size_t)idx];
        if (classical) {
            kc.c.push_back(std::exp(-t));
            kc.tau.push_back(std::sqrt(std::max(0.0, (1.0 - std::exp(-2.0 * t)) * lam)));
        } else {
            kc.c.push_back(std::exp(-t / (2.0 * lam)));
            kc.tau.push_back(
                std::sqrt(std::max(0.0, lam * (1.0 - std::exp(-t / lam)))));
        }
    }
    return kc;
}

void check_kernel_args(const GaussianMeasure& gm, const CylFunction& f, double t,
                       const Point& x) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ArgumentError("kernel time must be >= 0");
    if (x.dim() != gm.space.dim)
        throw ArgumentError("point dimension does not match the space");
    for (int idx : f.active_indices())
        if (idx < 0 || idx >= gm.space.dim)
            throw ArgumentError("active coordinate outside the space");
}

// Shared evaluator for both Gaussian kernels. partial_k < 0 asks for the
// value; otherwise the exact x_k-derivative (chain factor c_k).
double kernel_eval(const GaussianMeasure& gm, const CylFunction& f, double t,
                   const Point& x, const EvalEngine& eng, bool classical,
                   int partial_k) {
    check_kernel_args(gm, f, t, x);
    const auto& active = f.active_indices();
    int m = f.arity();

    int pos = -1;
    if (partial_k >= 0) {
        if (partial_k >= gm.space.dim) throw ArgumentError("derivative index out of range");
        for (int j = 0; j < m; ++j)
            if (active[(size_t)j] == partial_k) pos = j;
        if (pos < 0) return 0.0;
    }

    std::vector<double> center(m);
    for (int j = 0; j < m; ++j) center[(size_t)j] = x.coords[(size_t)active[(size_t)j]];

    if (t == 0.0) {
        if (partial_k < 0) return f.value_packed(center);
        std::vector<double> g(m);
        f.gradient_packed(center, g);
        return g[(size_t)pos];
    }

    KernelCoef kc = kernel_coefs(gm.space, active, t, classical);
    for (int j = 0; j < m; ++j) center[(size_t)j] *= kc.c[(size_t)j];

    if (m == 0) return partial_k < 0 ? f.value_packed({}) : 0.0;

    if (m <= 4) {
        const QuadRule& rule = gauss_hermite_unit(eng.gh_order);
        int ord = (int)rule.nodes.size();
        std::vector<int> ix(m, 0);
        std::vector<double> u(m), g(m);
        double sum = 0.0, comp = 0.0;
        while (true) {
            double w = 1.0;
            for (int j = 0; j < m; ++j) {
                u[(size_t)j] =
                    center[(size_t)j] + kc.tau[(size_t)j] * rule.nodes[(size_t)ix[(size_t)j]];
                w *= rule.weights[(size_t)ix[(size_t)j]];
            }
            double fv;
            if (partial_k < 0) {
                fv = f.value_packed(u);
            } else {
                f.gradient_packed(u, g);
                fv = g[(size_t)pos] * kc.c[(size_t)pos];
            }
            double term = w * fv - comp;
            double next = sum + term;
            comp = (next - sum) - term;
            sum = next;

            int j = 0;
            while (j < m && ++ix[(size_t)j] == ord) ix[(size_t)j++] = 0;
            if (j == m) break;
        }
        return sum;
    }

    // Wide core: sample the kernel noise. The auxiliary measure carries the
    // per-coordinate spreads as its eigenvalues.
    std::vector<double> tau2(m);
    for (int j = 0; j < m; ++j) tau2[(size_t)j] = kc.tau[(size_t)j] * kc.tau[(size_t)j];
    auto aux = Measure{make_gaussian(SpectralSpace::from_eigenvalues(tau2))};
    auto fn = [&](const Point& y) {
        std::vector<double> u(center);
        for (int j = 0; j < m; ++j) u[(size_t)j] += y.coords[(size_t)j];
        if (partial_k < 0) return f.value_packed(u);
        std::vector<double> grad((size_t)m);
        f.gradient_packed(u, grad);
        return grad[(size_t)pos] * kc.c[(size_t)pos];
    };
    return mc_integrate(fn, aux, eng.mc_samples, eng.rng, eng.workers).value;
}

// ---- Euler path machinery ---------------------------------------------------

struct EmStep {
    double dt = 0.0;
    int steps = 0;
    std::vector<double> decay;   // e^{-dt/(2 lambda_k)}
    std::vector<double> spread;  // sqrt(lambda_k (1 - e^{-dt/lambda_k}))
};

EmStep make_em_step(const SpectralSpace& sp, double t, double dt_req) {
    EmStep st;
    st.steps = std::max(1, (int)std::ceil(t / dt_req - 1e-12));
    st.dt = t / st.steps;
    st.decay.reserve((size_t)sp.dim);
    st.spread.reserve((size_t)sp.dim);
    for (double lam : sp.eigenvalues) {
        st.decay.push_back(std::exp(-st.dt / (2.0 * lam)));
        st.spread.push_back(std::sqrt(lam * (1.0 - std::exp(-st.dt / lam))));
    }
    return st;
}

bool state_ok(const Point& p) {
    for (double c : p.coords)
        if (!std::isfinite(c) || std::abs(c) > kBlowupGuard) return false;
    return true;
}

// One splitting step: explicit Euler for -grad U, then the exact linear flow.
bool evolve_single(Point& a, const Potential& U, const EmStep& st, SampleRng& g) {
    int dim = a.dim();
    for (int s = 0; s < st.steps; ++s) {
        auto gr = U.gradient(a);
        for (int k = 0; k < dim; ++k) a.coords[(size_t)k] -= st.dt * gr[(size_t)k];
        for (int k = 0; k < dim; ++k)
            a.coords[(size_t)k] =
                st.decay[(size_t)k] * a.coords[(size_t)k] +
                st.spread[(size_t)k] * g.next_normal();
        if (!state_ok(a)) return false;
    }
    return true;
}

// Two starts driven by the same increments (synchronous coupling).
bool evolve_pair(Point& a, Point& b, const Potential& U, const EmStep& st,
                 SampleRng& g) {
    int dim = a.dim();
    for (int s = 0; s < st.steps; ++s) {
        auto ga = U.gradient(a);
        auto gb = U.gradient(b);
        for (int k = 0; k < dim; ++k) {
            a.coords[(size_t)k] -= st.dt * ga[(size_t)k];
            b.coords[(size_t)k] -= st.dt * gb[(size_t)k];
        }
        for (int k = 0; k < dim; ++k) {
            double z = g.next_normal();
            a.coords[(size_t)k] =
                st.decay[(size_t)k] * a.coords[(size_t)k] + st.spread[(size_t)k] * z;
            b.coords[(size_t)k] =
                st.decay[(size_t)k] * b.coords[(size_t)k] + st.spread[(size_t)k] * z;
        }
        if (!state_ok(a) || !state_ok(b)) return false;
    }
    return true;
}

const WeightedGaussianMeasure& weighted_of(const SemigroupSpec& sg) {
    if (sg.kind != SemigroupKind::dirichlet_em)
        throw ArgumentError("operation needs the dirichlet_em semigroup");
    return std::get<WeightedGaussianMeasure>(sg.measure.impl);
}

void check_em_args(const SemigroupSpec& sg, double t, const Point& x) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ArgumentError("path time must be >= 0");
    if (x.dim() != sg.measure.space().dim)
        throw ArgumentError("point dimension does not match the space");
}

void check_blowups(uint64_t blow, uint64_t total) {
    if (blow * 1000 > total)
        throw IntegrityError("path blow-up rate above 0.1%: " + std::to_string(blow) +
                             " of " + std::to_string(total) + " paths");
}

// CRN central-difference mean of d/dx_c of the path average, with stderr.
void em_partial_raw(const WeightedGaussianMeasure& wm, const EmStep& st,
                    const std::function<double(const Point&)>& f, const Point& y,
                    int c, uint64_t paths, const RngStream& rng, Welford& acc,
                    uint64_t& blow) {
    double h = 1e-3 * (1.0 + std::abs(y.coords[(size_t)c]));
    for (uint64_t i = 0; i < paths; ++i) {
        SampleRng g = rng.at_sample((uint32_t)i);
        Point a = y, b = y;
        a.coords[(size_t)c] += h;
        b.coords[(size_t)c] -= h;
        if (!evolve_pair(a, b, wm.potential, st, g)) {
            ++blow;
            continue;
        }
        acc.add((f(a) - f(b)) / (2.0 * h));
    }
}

McEstimate finish_estimate(const Welford& acc, uint64_t paths, const RngStream& rng,
                           const EmStep& st, uint64_t blow) {
    McEstimate est;
    est.value = acc.mean;
    est.std_err = acc.std_err();
    est.n_samples = paths;
    est.seed = rng.seed;
    est.meta["mode"] = "euler_paths";
    est.meta["dt"] = num_str(st.dt);
    est.meta["steps"] = std::to_string(st.steps);
    est.meta["blowups"] = std::to_string(blow);
    return est;
}

}  // namespace

SemigroupSpec make_semigroup(SemigroupKind kind, Measure measure, EmParams em) {
    if (!(em.dt > 0.0) || !std::isfinite(em.dt))
        throw ArgumentError("em dt must be positive");
    if (em.paths < 2) throw ArgumentError("em paths must be at least 2");
    if (em.burn_in < 0) em.burn_in = -1;
    if (kind == SemigroupKind::dirichlet_em) {
        if (!std::holds_alternative<WeightedGaussianMeasure>(measure.impl))
            throw ArgumentError("dirichlet_em needs a weighted Gaussian measure");
    } else {
        if (!std::holds_alternative<GaussianMeasure>(measure.impl))
            throw ArgumentError("kernel semigroups need a Gaussian measure");
    }
    return SemigroupSpec{kind, std::move(measure), em};
}

double mehler_apply(const GaussianMeasure& gm, const CylFunction& f, double t,
                    const Point& x, const EvalEngine& engine) {
    return kernel_eval(gm, f, t, x, engine, true, -1);
}

double mehler_partial(const GaussianMeasure& gm, const CylFunction& f, double t,
                      const Point& x, int k, const EvalEngine& engine) {
    if (k < 0) throw ArgumentError("derivative index out of range");
    return kernel_eval(gm, f, t, x, engine, true, k);
}

CylFunction mehler_push(const GaussianMeasure& gm, const CylFunction& f, double t,
                        int gh_order) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ArgumentError("kernel time must be >= 0");
    auto active = f.active_indices();
    int m = f.arity();
    auto kc = std::make_shared<KernelCoef>(kernel_coefs(gm.space, active, t, true));
    auto base = std::make_shared<CylFunction>(f);
    const QuadRule& rule = gauss_hermite_unit(gh_order);
    auto nodes = std::make_shared<QuadRule>(rule);

    auto value = [kc, base, nodes, m](std::span<const double> u) {
        int ord = (int)nodes->nodes.size();
        std::vector<int> ix((size_t)m, 0);
        std::vector<double> p((size_t)m);
        double sum = 0.0;
        if (m == 0) return base->value_packed({});
        while (true) {
            double w = 1.0;
            for (int j = 0; j < m; ++j) {
                p[(size_t)j] = kc->c[(size_t)j] * u[(size_t)j] +
                               kc->tau[(size_t)j] * nodes->nodes[(size_t)ix[(size_t)j]];
                w *= nodes->weights[(size_t)ix[(size_t)j]];
            }
            sum += w * base->value_packed(p);
            int j = 0;
            while (j < m && ++ix[(size_t)j] == ord) ix[(size_t)j++] = 0;
            if (j == m) break;
        }
        return sum;
    };
    auto grad = [kc, base, nodes, m](std::span<const double> u, std::span<double> out) {
        int ord = (int)nodes->nodes.size();
        std::vector<int> ix((size_t)m, 0);
        std::vector<double> p((size_t)m), g((size_t)m);
        for (int j = 0; j < m; ++j) out[(size_t)j] = 0.0;
        if (m == 0) return;
        while (true) {
            double w = 1.0;
            for (int j = 0; j < m; ++j) {
                p[(size_t)j] = kc->c[(size_t)j] * u[(size_t)j] +
                               kc->tau[(size_t)j] * nodes->nodes[(size_t)ix[(size_t)j]];
                w *= nodes->weights[(size_t)ix[(size_t)j]];
            }
            base->gradient_packed(p, g);
            for (int j = 0; j < m; ++j) out[(size_t)j] += w * g[(size_t)j];
            int j = 0;
            while (j < m && ++ix[(size_t)j] == ord) ix[(size_t)j++] = 0;
            if (j == m) break;
        }
        for (int j = 0; j < m; ++j) out[(size_t)j] *= kc->c[(size_t)j];
    };

    std::optional<double> gb;
    if (f.grad_sup_bound()) gb = *f.grad_sup_bound() * std::exp(-t);
    return CylFunction(active, value, grad, nullptr, f.sup_bound(), gb);
}

double drifted_ou_apply(const GaussianMeasure& gm, const CylFunction& f, double t,
                        const Point& x, const EvalEngine& engine) {
    return kernel_eval(gm, f, t, x, engine, false, -1);
}

double drifted_ou_partial(const GaussianMeasure& gm, const CylFunction& f, double t,
                          const Point& x, int k, const EvalEngine& engine) {
    if (k < 0) throw ArgumentError("derivative index out of range");
    return kernel_eval(gm, f, t, x, engine, false, k);
}

double mehler_halfspace_value(const GaussianMeasure& gm, const std::vector<double>& a,
                              double r, double t, const Point& x) {
    if ((int)a.size() != gm.space.dim || x.dim() != gm.space.dim)
        throw ArgumentError("direction dimension does not match the space");
    if (!(t > 0.0)) throw ArgumentError("kernel time must be positive");
    double s2 = 0.0, inner = 0.0;
    for (int k = 0; k < gm.space.dim; ++k) {
        s2 += gm.space.eigenvalues[(size_t)k] * a[(size_t)k] * a[(size_t)k];
        inner += a[(size_t)k] * x.coords[(size_t)k];
    }
    if (!(s2 > 0.0)) throw ArgumentError("direction has zero stretched norm");
    double tau = std::sqrt(1.0 - std::exp(-2.0 * t));
    return normal_cdf((r - std::exp(-t) * inner) / (tau * std::sqrt(s2)));
}

std::vector<double> mehler_halfspace_gradient(const GaussianMeasure& gm,
                                              const std::vector<double>& a, double r,
                                              double t, const Point& x) {
    if ((int)a.size() != gm.space.dim || x.dim() != gm.space.dim)
        throw ArgumentError("direction dimension does not match the space");
    if (!(t > 0.0)) throw ArgumentError("kernel time must be positive");
    double s2 = 0.0, inner = 0.0;
    for (int k = 0; k < gm.space.dim; ++k) {
        s2 += gm.space.eigenvalues[(size_t)k] * a[(size_t)k] * a[(size_t)k];
        inner += a[(size_t)k] * x.coords[(size_t)k];
    }
    if (!(s2 > 0.0)) throw ArgumentError("direction has zero stretched norm");
    double tau = std::sqrt(1.0 - std::exp(-2.0 * t));
    double scale = tau * std::sqrt(s2);
    double dens = normal_pdf((r - std::exp(-t) * inner) / scale);
    std::vector<double> grad((size_t)gm.space.dim);
    for (int k = 0; k < gm.space.dim; ++k)
        grad[(size_t)k] = -dens * std::exp(-t) * a[(size_t)k] / scale;
    return grad;
}

McEstimate dirichlet_em_apply(const SemigroupSpec& sg,
                              const std::function<double(const Point&)>& f, double t,
                              const Point& x, const RngStream& rng) {
    const auto& wm = weighted_of(sg);
    check_em_args(sg, t, x);
    uint64_t paths = sg.em.paths;
    if (t == 0.0) {
        McEstimate est;
        est.value = f(x);
        est.n_samples = paths;
        est.seed = rng.seed;
        est.meta["mode"] = "euler_paths";
        return est;
    }
    EmStep st = make_em_step(sg.measure.space(), t, sg.em.dt);
    Welford acc;
    uint64_t blow = 0;
    for (uint64_t i = 0; i < paths; ++i) {
        SampleRng g = rng.at_sample((uint32_t)i);
        Point s = x;
        if (!evolve_single(s, wm.potential, st, g)) {
            ++blow;
            continue;
        }
        acc.add(f(s));
    }
    check_blowups(blow, paths);
    return finish_estimate(acc, paths, rng, st, blow);
}

McEstimate dirichlet_em_partial(const SemigroupSpec& sg,
                                const std::function<double(const Point&)>& f, double t,
                                const Point& x, int k, const RngStream& rng) {
    const auto& wm = weighted_of(sg);
    check_em_args(sg, t, x);
    if (k < 0 || k >= sg.measure.space().dim)
        throw ArgumentError("derivative index out of range");
    EmStep st = make_em_step(sg.measure.space(), std::max(t, 0.0), sg.em.dt);
    if (t == 0.0) st.steps = 0;
    Welford acc;
    uint64_t blow = 0;
    em_partial_raw(wm, st, f, x, k, sg.em.paths, rng, acc, blow);
    check_blowups(blow, sg.em.paths);
    auto est = finish_estimate(acc, sg.em.paths, rng, st, blow);
    est.meta["fd_step"] = num_str(1e-3 * (1.0 + std::abs(x.coords[(size_t)k])));
    return est;
}

CoupledEstimate dirichlet_em_coupled(const SemigroupSpec& sg,
                                     const std::function<double(const Point&)>& f,
                                     double t, const Point& x, const Point& y,
                                     const RngStream& rng) {
    const auto& wm = weighted_of(sg);
    check_em_args(sg, t, x);
    check_em_args(sg, t, y);
    EmStep st = make_em_step(sg.measure.space(), t, sg.em.dt);
    if (t == 0.0) st.steps = 0;
    Welford ax, ay, ad;
    uint64_t blow = 0;
    for (uint64_t i = 0; i < sg.em.paths; ++i) {
        SampleRng g = rng.at_sample((uint32_t)i);
        Point a = x, b = y;
        if (!evolve_pair(a, b, wm.potential, st, g)) {
            ++blow;
            continue;
        }
        double fa = f(a), fb = f(b);
        ax.add(fa);
        ay.add(fb);
        ad.add(fa - fb);
    }
    check_blowups(blow, sg.em.paths);
    CoupledEstimate out{finish_estimate(ax, sg.em.paths, rng, st, blow),
                        finish_estimate(ay, sg.em.paths, rng, st, blow),
                        finish_estimate(ad, sg.em.paths, rng, st, blow)};
    return out;
}

std::vector<Point> em_invariant_sample(const SemigroupSpec& sg, uint64_t count,
                                       const RngStream& rng) {
    const auto& wm = weighted_of(sg);
    const auto& sp = sg.measure.space();
    double maxlam = *std::max_element(sp.eigenvalues.begin(), sp.eigenvalues.end());
    int64_t burn = sg.em.burn_in >= 0
                       ? sg.em.burn_in
                       : (int64_t)std::ceil(20.0 * maxlam / sg.em.dt);
    EmStep st;
    st.dt = sg.em.dt;
    st.steps = (int)burn;
    for (double lam : sp.eigenvalues) {
        st.decay.push_back(std::exp(-st.dt / (2.0 * lam)));
        st.spread.push_back(std::sqrt(lam * (1.0 - std::exp(-st.dt / lam))));
    }

    std::vector<Point> out;
    out.reserve(count);
    uint64_t blow = 0;
    for (uint64_t i = 0; i < count; ++i) {
        SampleRng g = rng.at_sample((uint32_t)i);
        Point s;
        s.coords.assign((size_t)sp.dim, 0.0);
        int tries = 0;
        while (!evolve_single(s, wm.potential, st, g)) {
            ++blow;
            if (++tries > 3)
                throw IntegrityError("invariant sampling path keeps blowing up");
            s.coords.assign((size_t)sp.dim, 0.0);
        }
        out.push_back(std::move(s));
    }
    check_blowups(blow, count + blow);
    return out;
}

CommutationResult commutation_defect(const SemigroupSpec& sg, const CylFunction& f,
                                     int k, double t, const std::vector<Point>& probes,
                                     const RngStream& rng) {
    const auto& wm = weighted_of(sg);
    const auto& sp = sg.measure.space();
    if (k < 0 || k >= sp.dim) throw ArgumentError("derivative index out of range");
    if (!(t > 0.0) || !std::isfinite(t)) throw ArgumentError("time must be positive");
    if (probes.empty()) throw ArgumentError("need at least one probe point");
    if (!wm.potential.hessian_vec)
        throw CapabilityError("commutation defect needs a Hessian-capable potential");
    for (const auto& p : probes)
        if (p.dim() != sp.dim)
            throw ArgumentError("probe dimension does not match the space");

    double lamk = sp.eigenvalues[(size_t)k];
    double factor = std::exp(-t / (2.0 * lamk));
    uint64_t paths = sg.em.paths;
    uint64_t p_out = std::max<uint64_t>(16, paths / 512);
    uint64_t p_in = 32;
    const QuadRule& gl = gauss_legendre_01(8);

    // d_k f as a plain functional; zero when f ignores coordinate k.
    int pos = -1;
    const auto& active = f.active_indices();
    for (size_t j = 0; j < active.size(); ++j)
        if (active[j] == k) pos = (int)j;
    std::function<double(const Point&)> dfk;
    if (pos < 0) {
        dfk = [](const Point&) { return 0.0; };
    } else {
        int m = f.arity();
        dfk = [f, pos, m](const Point& y) {
            std::vector<double> g((size_t)m);
            f.gradient_active(y, g);
            return g[(size_t)pos];
        };
    }
    auto fval = [&f](const Point& y) { return f.value(y); };

    std::vector<double> e_k((size_t)sp.dim, 0.0);
    e_k[(size_t)k] = 1.0;

    double lhs_sum = 0.0, lhs_var = 0.0;
    double rhs_sum = 0.0, rhs_var = 0.0;
    uint64_t blow = 0, attempted = 0;
    uint64_t tag = 0;
    auto derive = [&rng](uint64_t tg) {
        return RngStream{rng.seed, mix_stream(rng.stream_id, tg)};
    };

    for (const auto& x : probes) {
        // LHS: CRN derivative minus the commuted term.
        EmStep st_t = make_em_step(sp, t, sg.em.dt);
        Welford accA;
        em_partial_raw(wm, st_t, fval, x, k, paths, derive(tag++), accA, blow);
        attempted += paths;

        Welford accB;
        for (uint64_t i = 0; i < paths; ++i) {
            SampleRng g = derive(tag).at_sample((uint32_t)i);
            Point s = x;
            if (!evolve_single(s, wm.potential, st_t, g)) {
                ++blow;
                continue;
            }
            accB.add(dfk(s));
        }
        ++tag;
        attempted += paths;

        lhs_sum += accA.mean - factor * accB.mean;
        double seA = accA.std_err(), seB = accB.std_err();
        lhs_var += seA * seA + factor * factor * seB * seB;

        // RHS: time integral of the Hessian coupling along the flow.
        for (size_t j = 0; j < gl.nodes.size(); ++j) {
            double s_j = t * gl.nodes[j];
            double w_j = t * gl.weights[j];
            double damp = std::exp(-(t - s_j) / (2.0 * lamk));
            EmStep st_out = make_em_step(sp, t - s_j, sg.em.dt);
            EmStep st_in = make_em_step(sp, s_j, sg.em.dt);

            Welford node_acc;
            RngStream outer_stream = derive(tag++);
            for (uint64_t o = 0; o < p_out; ++o) {
                SampleRng g = outer_stream.at_sample((uint32_t)o);
                Point y = x;
                ++attempted;
                if (!evolve_single(y, wm.potential, st_out, g)) {
                    ++blow;
                    continue;
                }
                auto hcol = wm.potential.hessian_vec(y, e_k);
                double val = 0.0;
                for (int c = 0; c < sp.dim; ++c) {
                    if (hcol[(size_t)c] == 0.0) continue;
                    Welford inner;
                    em_partial_raw(wm, st_in, fval, y, c,
                                   p_in, derive(tag++), inner, blow);
                    attempted += p_in;
                    val += hcol[(size_t)c] * inner.mean;
                }
                node_acc.add(val);
            }
            rhs_sum -= w_j * damp * node_acc.mean;
            double se = node_acc.std_err();
            rhs_var += w_j * w_j * damp * damp * se * se;
        }
    }
    check_blowups(blow, attempted);

    double np = (double)probes.size();
    auto pack = [&](double v, double var) {
        McEstimate e;
        e.value = v / np;
        e.std_err = std::sqrt(var) / np;
        e.n_samples = paths;
        e.seed = rng.seed;
        e.meta["probes"] = std::to_string(probes.size());
        e.meta["gl_nodes"] = std::to_string(gl.nodes.size());
        e.meta["outer_paths"] = std::to_string(p_out);
        e.meta["inner_paths"] = std::to_string(p_in);
        e.meta["dt"] = num_str(sg.em.dt);
        e.meta["blowups"] = std::to_string(blow);
        return e;
    };
    CommutationResult res;
    res.lhs = pack(lhs_sum, lhs_var);
    res.rhs = pack(rhs_sum, rhs_var);
    res.defect = pack(lhs_sum - rhs_sum, lhs_var + rhs_var);
    return res;
}

Potential appendix_mollified_potential(const Potential& U, int n, double eps,
                                       int nodes) {
    if (!U.value || !U.gradient) throw ArgumentError("potential lacks value or gradient");
    if (n < 1 || n > U.dim) throw ArgumentError("projection rank outside [1, dim]");
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ArgumentError("eps must be positive");
    if (nodes < 2) throw ArgumentError("need at least two mollification nodes");

    // Frozen draw from the product bump density (1 - u^2)^2 on [-1, 1]^n,
    // stored as +/- pairs so every odd node moment vanishes identically.
    int half = (nodes + 1) / 2;
    auto pts = std::make_shared<std::vector<double>>();
    pts->reserve((size_t)half * (size_t)n);
    SampleRng g = RngStream{0x6d6f6c6cull, 0x626d70ull}.scalar();
    for (int j = 0; j < half; ++j) {
        for (int c = 0; c < n; ++c) {
            double u;
            do {
                u = 2.0 * g.next_unit() - 1.0;
            } while (g.next_unit() > (1.0 - u * u) * (1.0 - u * u));
            pts->push_back(u);
        }
    }

    auto base = std::make_shared<Potential>(U);
    int dim = U.dim;

    auto shift = [pts, n, dim, eps](const Point& x, int j, double sign4) {
        Point w;
        w.coords.assign((size_t)dim, 0.0);
        for (int c = 0; c < n; ++c)
            w.coords[(size_t)c] =
                x.coords[(size_t)c] - sign4 * eps * (*pts)[(size_t)j * (size_t)n + (size_t)c];
        return w;
    };

    Potential out;
    out.dim = dim;
    out.convex = U.convex;
    out.lower_bound = U.lower_bound;
    out.lip_grad = U.lip_grad;
    out.value = [base, shift, half](const Point& x) {
        double sum = 0.0;
        for (int j = 0; j < half; ++j)
            sum += base->value(shift(x, j, 1.0)) + base->value(shift(x, j, -1.0));
        return sum / (2.0 * half);
    };
    out.gradient = [base, shift, half, n, dim](const Point& x) {
        std::vector<double> acc((size_t)dim, 0.0);
        for (int j = 0; j < half; ++j) {
            for (double sgn : {1.0, -1.0}) {
                auto gr = base->gradient(shift(x, j, sgn));
                for (int c = 0; c < n; ++c) acc[(size_t)c] += gr[(size_t)c];
            }
        }
        for (int c = 0; c < n; ++c) acc[(size_t)c] /= 2.0 * half;
        return acc;
    };
    if (U.hessian_vec) {
        out.hessian_vec = [base, shift, half, n,
                           dim](const Point& x, const std::vector<double>& v) {
            std::vector<double> pv((size_t)dim, 0.0);
            for (int c = 0; c < n; ++c) pv[(size_t)c] = v[(size_t)c];
            std::vector<double> acc((size_t)dim, 0.0);
            for (int j = 0; j < half; ++j) {
                for (double sgn : {1.0, -1.0}) {
                    auto hv = base->hessian_vec(shift(x, j, sgn), pv);
                    for (int c = 0; c < n; ++c) acc[(size_t)c] += hv[(size_t)c];
                }
            }
            for (int c = 0; c < n; ++c) acc[(size_t)c] /= 2.0 * half;
            return acc;
        };
    }
    return out;
}

}  // namespace bvc
