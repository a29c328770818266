#include <bvcalc/variation.hpp>

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

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double c : v) s += c * c;
    return std::sqrt(s);
}

// Polynomial plus radial feature map over a small active set:
// [x_i] ++ [x_i x_j, i <= j] ++ [exp(-|x|^2 / 4)].
struct Features {
    std::vector<int> act;

    int count() const {
        int k = (int)act.size();
        return k + k * (k + 1) / 2 + 1;
    }

    void eval(const Point& x, std::vector<double>& feat) const {
        int k = (int)act.size();
        feat.assign((size_t)count(), 0.0);
        double q = 0.0;
        for (int i = 0; i < k; ++i) {
            double xi = x.coords[(size_t)act[(size_t)i]];
            feat[(size_t)i] = xi;
            q += xi * xi;
        }
        int p = k;
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j)
                feat[(size_t)p++] = feat[(size_t)i] * feat[(size_t)j];
        feat[(size_t)p] = std::exp(-q / 4.0);
    }

    // d feat / d x_c for a raw coordinate c; zero when c is not active.
    void jac(const Point& x, int c, std::vector<double>& out) const {
        int k = (int)act.size();
        out.assign((size_t)count(), 0.0);
        int pos = -1;
        for (int i = 0; i < k; ++i)
            if (act[(size_t)i] == c) pos = i;
        if (pos < 0) return;
        out[(size_t)pos] = 1.0;
        double q = 0.0;
        for (int i = 0; i < k; ++i) {
            double xi = x.coords[(size_t)act[(size_t)i]];
            q += xi * xi;
        }
        int p = k;
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j, ++p) {
                if (i == pos && j == pos)
                    out[(size_t)p] = 2.0 * x.coords[(size_t)c];
                else if (i == pos)
                    out[(size_t)p] = x.coords[(size_t)act[(size_t)j]];
                else if (j == pos)
                    out[(size_t)p] = x.coords[(size_t)act[(size_t)i]];
            }
        out[(size_t)p] = -0.5 * x.coords[(size_t)c] * std::exp(-q / 4.0);
    }
};

// alpha(q) = tanh(sqrt(q)) / sqrt(q) and its first two q-derivatives; the
// field normalizer F = alpha(|H|^2) H keeps |F| = tanh(|H|) < 1.
struct Alpha {
    double a, a1, a2;
};

Alpha alpha_of(double q) {
    if (q < 1e-6)
        return {1.0 - q / 3.0 + 2.0 * q * q / 15.0, -1.0 / 3.0 + 4.0 * q / 15.0, 4.0 / 15.0};
    double rr = std::sqrt(q);
    double th = std::tanh(rr);
    double sech2 = 1.0 - th * th;
    double a = th / rr;
    double a1 = (sech2 - a) / (2.0 * q);
    double a2 = (-a * sech2 - 3.0 * a1) / (2.0 * q);
    return {a, a1, a2};
}

struct FamilyCtx {
    TestFamily fam;
    Features feats;
    int np = 0;
    std::vector<std::vector<double>> basis;  // field: e_{dirs[i]} in full dim
    std::vector<double> cdiag;               // field: gradient-side coefficient
};

std::shared_ptr<FamilyCtx> make_ctx(const Measure& nu, const TestFamily& fam,
                                    VariationKind kind) {
    int dim = nu.dim();
    for (int c : fam.active)
        if (c < 0 || c >= dim) throw ArgumentError("family feature coordinate out of range");
    auto ctx = std::make_shared<FamilyCtx>();
    ctx->fam = fam;
    ctx->feats.act = fam.active;
    ctx->np = family_param_count(fam);
    if (fam.arity == TestFamily::Arity::field) {
        const auto& space = nu.space();
        ctx->basis.resize(fam.directions.size());
        ctx->cdiag.resize(fam.directions.size());
        for (size_t i = 0; i < fam.directions.size(); ++i) {
            int c = fam.directions[i];
            if (c < 0 || c >= dim) throw ArgumentError("field direction out of range");
            ctx->basis[i].assign((size_t)dim, 0.0);
            ctx->basis[i][(size_t)c] = 1.0;
            ctx->cdiag[i] = kind == VariationKind::V ? space.r_diag[(size_t)c] : 1.0;
        }
    }
    return ctx;
}

// u(x) times the adjoint pairing of the parametric test function, with the
// optional parameter gradient. grad may be null.
double point_objective(const Measure& nu, const BvCandidate& u, const FamilyCtx& ctx,
                       VariationKind kind, const std::vector<double>& z, const Point& x,
                       std::span<const double> theta, double* grad) {
    double uv = bv_value(u, x);
    int nf = ctx.feats.count();
    std::vector<double> feat;
    ctx.feats.eval(x, feat);

    if (ctx.fam.arity == TestFamily::Arity::scalar) {
        const double* w = theta.data();
        double b = theta[(size_t)nf];
        double s = b;
        for (int j = 0; j < nf; ++j) s += w[j] * feat[(size_t)j];
        double phi = std::tanh(s);
        double dphi = 1.0 - phi * phi;

        const auto& space = nu.space();
        std::vector<double> q((size_t)nf, 0.0), jrow;
        for (size_t j = 0; j < ctx.feats.act.size(); ++j) {
            int c = ctx.feats.act[j];
            double cz = space.r_diag[(size_t)c] * z[(size_t)c];
            if (cz == 0.0) continue;
            ctx.feats.jac(x, c, jrow);
            for (int f = 0; f < nf; ++f) q[(size_t)f] += cz * jrow[(size_t)f];
        }
        double wq = 0.0;
        for (int f = 0; f < nf; ++f) wq += w[f] * q[(size_t)f];
        double vz = nu.v_z(x, z);
        double A = dphi * wq - vz * phi;
        if (grad) {
            double ds = -2.0 * phi * dphi * wq - vz * dphi;
            for (int f = 0; f < nf; ++f)
                grad[f] = uv * (ds * feat[(size_t)f] + dphi * q[(size_t)f]);
            grad[nf] = uv * ds;
        }
        return uv * A;
    }

    // Field arity: H_i affine in the features, F = alpha(|H|^2) H.
    int nd = (int)ctx.fam.directions.size();
    int stride = nf + 1;
    std::vector<double> H((size_t)nd), wJ((size_t)nd * (size_t)nd);
    std::vector<std::vector<double>> J((size_t)nd);
    double q2 = 0.0;
    for (int i = 0; i < nd; ++i) {
        const double* wi = theta.data() + (size_t)i * (size_t)stride;
        double s = wi[nf];
        for (int f = 0; f < nf; ++f) s += wi[f] * feat[(size_t)f];
        H[(size_t)i] = s;
        q2 += s * s;
        ctx.feats.jac(x, ctx.fam.directions[(size_t)i], J[(size_t)i]);
    }
    for (int j = 0; j < nd; ++j) {
        const double* wj = theta.data() + (size_t)j * (size_t)stride;
        for (int i = 0; i < nd; ++i) {
            double s = 0.0;
            for (int f = 0; f < nf; ++f) s += wj[f] * J[(size_t)i][(size_t)f];
            wJ[(size_t)j * (size_t)nd + (size_t)i] = s;
        }
    }
    Alpha al = alpha_of(q2);

    // d_i = v_{e_c} (V) or v_{e_c} / r_c (V0); c_i = r_c (V) or 1 (V0).
    std::vector<double> dvec((size_t)nd), g((size_t)nd), h((size_t)nd);
    const auto& space = nu.space();
    for (int i = 0; i < nd; ++i) {
        int c = ctx.fam.directions[(size_t)i];
        double v = nu.v_z(x, ctx.basis[(size_t)i]);
        dvec[(size_t)i] = kind == VariationKind::V ? v : v / space.r_diag[(size_t)c];
        double gi = 0.0;
        for (int j = 0; j < nd; ++j)
            gi += 2.0 * H[(size_t)j] * wJ[(size_t)j * (size_t)nd + (size_t)i];
        g[(size_t)i] = gi;
        h[(size_t)i] = wJ[(size_t)i * (size_t)nd + (size_t)i];
    }
    double S1 = 0.0, S2 = 0.0, S3 = 0.0;
    for (int i = 0; i < nd; ++i) {
        S1 += ctx.cdiag[(size_t)i] * g[(size_t)i] * H[(size_t)i];
        S2 += ctx.cdiag[(size_t)i] * h[(size_t)i];
        S3 += dvec[(size_t)i] * H[(size_t)i];
    }
    double A = -al.a1 * S1 - al.a * S2 + al.a * S3;
    if (grad) {
        std::vector<double> Q((size_t)nf, 0.0);
        for (int i = 0; i < nd; ++i)
            for (int f = 0; f < nf; ++f)
                Q[(size_t)f] += ctx.cdiag[(size_t)i] * H[(size_t)i] * J[(size_t)i][(size_t)f];
        for (int j = 0; j < nd; ++j) {
            double Pj = 0.0;
            for (int i = 0; i < nd; ++i)
                Pj += ctx.cdiag[(size_t)i] * H[(size_t)i] *
                      wJ[(size_t)j * (size_t)nd + (size_t)i];
            double dq2 = 2.0 * H[(size_t)j];
            double dS1 = ctx.cdiag[(size_t)j] * g[(size_t)j] + 2.0 * Pj;
            double dA = -al.a2 * dq2 * S1 - al.a1 * dS1 - al.a1 * dq2 * S2 +
                        al.a1 * dq2 * S3 + al.a * dvec[(size_t)j];
            double* gj = grad + (size_t)j * (size_t)stride;
            for (int f = 0; f < nf; ++f)
                gj[f] = uv * (dA * feat[(size_t)f] - 2.0 * al.a1 * H[(size_t)j] * Q[(size_t)f] -
                              al.a * ctx.cdiag[(size_t)j] * J[(size_t)j][(size_t)f]);
            gj[nf] = uv * dA;
        }
    }
    return uv * A;
}

void validate_pairing(const Measure& nu, const TestFamily& fam, VariationKind kind,
                      const std::vector<double>& z) {
    if (kind == VariationKind::Vz) {
        if (fam.arity != TestFamily::Arity::scalar)
            throw ArgumentError("directional variation needs the scalar family");
        if ((int)z.size() != nu.dim())
            throw ArgumentError("direction z must match the truncation dimension");
    } else {
        if (fam.arity != TestFamily::Arity::field)
            throw ArgumentError("full variation needs the field family");
    }
}

struct WeightedAcc {
    double w = 0.0, wy = 0.0;
    std::vector<double> ws, ys;
    void add(double weight, double y) {
        w += weight;
        wy += weight * y;
        ws.push_back(weight);
        ys.push_back(y);
    }
    double mean() const { return w > 0.0 ? wy / w : 0.0; }
    double std_err() const {
        if (ws.size() < 2 || w <= 0.0) return 0.0;
        double m = mean(), s = 0.0;
        for (size_t i = 0; i < ws.size(); ++i) {
            double d = ws[i] * (ys[i] - m);
            s += d * d;
        }
        return std::sqrt(s) / w;
    }
};

}  // namespace

BvCandidate bv_cylinder(const SpectralSpace& space, CylFunction u) {
    for (int c : u.active_indices())
        if (c < 0 || c >= space.dim) throw ArgumentError("candidate active set out of range");
    BvCandidate out;
    out.kind = BvCandidate::Kind::cylinder;
    out.cyl = std::move(u);
    return out;
}

BvCandidate bv_halfspace(std::vector<double> a, double r) {
    if (a.empty()) throw ArgumentError("halfspace normal must be nonempty");
    bool nz = false;
    for (double c : a) nz = nz || c != 0.0;
    if (!nz) throw ArgumentError("halfspace normal must be nonzero");
    BvCandidate out;
    out.kind = BvCandidate::Kind::halfspace;
    out.a = std::move(a);
    out.r = r;
    return out;
}

BvCandidate bv_indicator(ScalarFunctional g, double r) {
    if (!g.value) throw ArgumentError("indicator needs a level function");
    BvCandidate out;
    out.kind = BvCandidate::Kind::indicator;
    out.g = std::move(g);
    out.r = r;
    return out;
}

BvCandidate bv_smoothed(SmoothedIndicator si) {
    if (!si.g.value || !si.g.gradient)
        throw ArgumentError("smoothed indicator needs a differentiable level function");
    if (!(si.eps > 0.0)) throw ArgumentError("smoothing width must be positive");
    BvCandidate out;
    out.kind = BvCandidate::Kind::smoothed;
    out.smoothed = std::move(si);
    return out;
}

double bv_value(const BvCandidate& u, const Point& x) {
    switch (u.kind) {
        case BvCandidate::Kind::cylinder:
            return u.cyl.value(x);
        case BvCandidate::Kind::halfspace: {
            double s = 0.0;
            for (size_t k = 0; k < u.a.size() && k < x.coords.size(); ++k)
                s += u.a[k] * x.coords[k];
            return s < u.r ? 1.0 : 0.0;
        }
        case BvCandidate::Kind::indicator:
            return u.g.value(x) < u.r ? 1.0 : 0.0;
        case BvCandidate::Kind::smoothed:
            return smoothed_indicator_eval(u.smoothed, x);
    }
    return 0.0;
}

std::vector<double> bv_sobolev_gradient(const SpectralSpace& space, const BvCandidate& u,
                                        const Point& x) {
    switch (u.kind) {
        case BvCandidate::Kind::cylinder:
            return full_gradient(space, u.cyl, x);
        case BvCandidate::Kind::smoothed:
            return smoothed_indicator_gradient(u.smoothed, x);
        default:
            throw ArgumentError("candidate has no Sobolev gradient");
    }
}

TestFamily scalar_family(std::vector<int> active) {
    if (active.empty() || active.size() > 8)
        throw ArgumentError("feature set must hold between one and eight coordinates");
    TestFamily fam;
    fam.arity = TestFamily::Arity::scalar;
    fam.active = std::move(active);
    return fam;
}

TestFamily field_family(std::vector<int> active, std::vector<int> directions) {
    if (active.empty() || active.size() > 8)
        throw ArgumentError("feature set must hold between one and eight coordinates");
    if (directions.empty() || directions.size() > 8)
        throw ArgumentError("field needs between one and eight directions");
    TestFamily fam;
    fam.arity = TestFamily::Arity::field;
    fam.active = std::move(active);
    fam.directions = std::move(directions);
    return fam;
}

int family_param_count(const TestFamily& fam) {
    int k = (int)fam.active.size();
    int nf = k + k * (k + 1) / 2 + 1;
    if (fam.arity == TestFamily::Arity::scalar) return nf + 1;
    return (int)fam.directions.size() * (nf + 1);
}

double family_objective(const Measure& nu, const BvCandidate& u, const TestFamily& fam,
                        VariationKind kind, const std::vector<double>& z,
                        std::span<const double> theta, const std::vector<Point>& pts,
                        std::span<double> grad_out) {
    validate_pairing(nu, fam, kind, z);
    auto ctx = make_ctx(nu, fam, kind);
    if ((int)theta.size() != ctx->np) throw ArgumentError("parameter vector has wrong length");
    if (pts.empty()) throw ArgumentError("objective needs at least one point");
    if (!grad_out.empty() && (int)grad_out.size() != ctx->np)
        throw ArgumentError("gradient buffer has wrong length");

    std::vector<double> gpt;
    double* gp = nullptr;
    if (!grad_out.empty()) {
        gpt.assign((size_t)ctx->np, 0.0);
        gp = gpt.data();
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
    }
    bool weighted = nu.weighted();
    double wsum = 0.0, osum = 0.0;
    for (const auto& x : pts) {
        double w = weighted ? std::exp(nu.log_weight(x)) : 1.0;
        double o = point_objective(nu, u, *ctx, kind, z, x, theta, gp);
        wsum += w;
        osum += w * o;
        if (gp)
            for (int j = 0; j < ctx->np; ++j) grad_out[(size_t)j] += w * gpt[(size_t)j];
    }
    if (!(wsum > 0.0) || !std::isfinite(osum))
        throw IntegrityError("non-finite ascent objective");
    if (gp)
        for (int j = 0; j < ctx->np; ++j) grad_out[(size_t)j] /= wsum;
    return osum / wsum;
}

McEstimate direct_variation(const Measure& nu, const BvCandidate& u, GradientKind which,
                            uint64_t n, const RngStream& rng, int workers) {
    const auto& space = nu.space();
    auto fn = [&space, &u, which](const Point& x) {
        auto g = bv_sobolev_gradient(space, u, x);
        double s = 0.0;
        for (size_t k = 0; k < g.size(); ++k) {
            double c = which == GradientKind::stretched ? space.r_diag[k] * g[k] : g[k];
            s += c * c;
        }
        return std::sqrt(s);
    };
    auto est = mc_integrate(fn, nu, n, rng, workers);
    est.meta["mode"] = which == GradientKind::stretched ? "direct_m" : "direct_nabla";
    return est;
}

SupResult sup_variation(const Measure& nu, const BvCandidate& u, const TestFamily& fam,
                        VariationKind kind, const std::vector<double>& z,
                        const AscentConfig& cfg, const RngStream& rng, int workers) {
    validate_pairing(nu, fam, kind, z);
    if (cfg.restarts < 1 || cfg.steps < 1 || cfg.batch < 2 || cfg.final_samples < 2)
        throw ArgumentError("ascent configuration out of range");
    auto ctx = make_ctx(nu, fam, kind);
    int np = ctx->np;

    // One shared evaluation set ranks the restarts fairly.
    uint64_t eval_n = std::max<uint64_t>(2048, cfg.batch * 8);
    std::vector<Point> eval_pts;
    std::vector<double> eval_wts;
    {
        RngStream es = rng.with_stream(555);
        bool weighted = nu.weighted();
        for (uint64_t i = 0; i < eval_n; ++i) {
            SampleRng g = es.at_sample((uint32_t)i);
            Point x = nu.sample(g);
            eval_wts.push_back(weighted ? std::exp(nu.log_weight(x)) : 1.0);
            eval_pts.push_back(std::move(x));
        }
    }
    auto eval_at = [&](std::span<const double> theta) {
        double ws = 0.0, os = 0.0;
        for (size_t i = 0; i < eval_pts.size(); ++i) {
            double o = point_objective(nu, u, *ctx, kind, z, eval_pts[i], theta, nullptr);
            ws += eval_wts[i];
            os += eval_wts[i] * o;
        }
        if (!std::isfinite(os)) throw IntegrityError("non-finite ascent objective");
        return ws > 0.0 ? os / ws : 0.0;
    };

    AscentTrace trace;
    std::vector<double> best_theta;
    double best_val = 0.0;
    bool weighted = nu.weighted();
    std::vector<double> theta((size_t)np), m((size_t)np), v((size_t)np),
        gbatch((size_t)np), gpt((size_t)np);
    const double b1 = 0.9, b2 = 0.999, adeps = 1e-8;

    for (int restart = 0; restart < cfg.restarts; ++restart) {
        SampleRng ig = rng.with_stream(777 + (uint64_t)restart).at_sample(0);
        for (int j = 0; j < np; ++j) theta[(size_t)j] = 0.4 * ig.next_normal();
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        std::vector<double> path;
        path.reserve((size_t)cfg.steps);

        for (int step = 0; step < cfg.steps; ++step) {
            RngStream bs = rng.with_stream(1 + (uint64_t)restart * 1000003ull + (uint64_t)step);
            double wsum = 0.0, osum = 0.0;
            std::fill(gbatch.begin(), gbatch.end(), 0.0);
            for (uint64_t i = 0; i < cfg.batch; ++i) {
                SampleRng g = bs.at_sample((uint32_t)i);
                Point x = nu.sample(g);
                double w = weighted ? std::exp(nu.log_weight(x)) : 1.0;
                double o = point_objective(nu, u, *ctx, kind, z, x, theta, gpt.data());
                wsum += w;
                osum += w * o;
                for (int j = 0; j < np; ++j) gbatch[(size_t)j] += w * gpt[(size_t)j];
            }
            if (!(wsum > 0.0) || !std::isfinite(osum))
                throw IntegrityError("non-finite ascent objective");
            path.push_back(osum / wsum);
            double bc1 = 1.0 - std::pow(b1, step + 1);
            double bc2 = 1.0 - std::pow(b2, step + 1);
            for (int j = 0; j < np; ++j) {
                double gj = gbatch[(size_t)j] / wsum;
                m[(size_t)j] = b1 * m[(size_t)j] + (1.0 - b1) * gj;
                v[(size_t)j] = b2 * v[(size_t)j] + (1.0 - b2) * gj * gj;
                theta[(size_t)j] +=
                    cfg.rate * (m[(size_t)j] / bc1) / (std::sqrt(v[(size_t)j] / bc2) + adeps);
            }
        }
        double val = eval_at(theta);
        trace.restart_values.push_back(val);
        trace.paths.push_back(std::move(path));
        if (restart == 0 || val > best_val) {
            best_val = val;
            best_theta = theta;
            trace.winner = restart;
        }
    }

    auto theta_ptr = std::make_shared<std::vector<double>>(std::move(best_theta));
    auto fn = [&nu, &u, ctx, kind, &z, theta_ptr](const Point& x) {
        return point_objective(nu, u, *ctx, kind, z, x,
                               std::span<const double>(*theta_ptr), nullptr);
    };
    McEstimate est = mc_integrate(fn, nu, cfg.final_samples, rng.with_stream(999983), workers);
    est.meta["mode"] = "ascent_final";
    est.meta["restarts"] = std::to_string(cfg.restarts);
    est.meta["winner"] = std::to_string(trace.winner);
    return SupResult{est, std::move(trace)};
}

double mehler_halfspace_variation(const GaussianMeasure& gm, const std::vector<double>& a,
                                  double r, double t, GradientKind which) {
    if ((int)a.size() != gm.space.dim) throw ArgumentError("normal must match the dimension");
    if (!(t >= 0.0)) throw ArgumentError("time must be nonnegative");
    double s2 = 0.0, ra2 = 0.0, na2 = 0.0;
    for (int k = 0; k < gm.space.dim; ++k) {
        double ak = a[(size_t)k];
        s2 += gm.space.eigenvalues[(size_t)k] * ak * ak;
        ra2 += gm.space.r_diag[(size_t)k] * gm.space.r_diag[(size_t)k] * ak * ak;
        na2 += ak * ak;
    }
    if (!(s2 > 0.0)) throw ArgumentError("halfspace normal must be nonzero");
    double sigma = std::sqrt(s2);
    double scale = which == GradientKind::stretched ? std::sqrt(ra2) : std::sqrt(na2);
    return std::exp(-t) * normal_pdf(r / sigma) * scale / sigma;
}

McEstimate mehler_halfspace_variation_mc(const GaussianMeasure& gm,
                                         const std::vector<double>& a, double r, double t,
                                         GradientKind which, uint64_t n,
                                         const RngStream& rng, int workers) {
    Measure nu{gm};
    auto fn = [&gm, &a, r, t, which](const Point& x) {
        auto g = mehler_halfspace_gradient(gm, a, r, t, x);
        double s = 0.0;
        for (size_t k = 0; k < g.size(); ++k) {
            double c = which == GradientKind::stretched ? gm.space.r_diag[k] * g[k] : g[k];
            s += c * c;
        }
        return std::sqrt(s);
    };
    return mc_integrate(fn, nu, n, rng, workers);
}

VariationCurve semigroup_variation(const BvCandidate& u, const SemigroupSpec& sg,
                                   const std::vector<double>& t_grid, GradientKind which,
                                   const EvalEngine& engine) {
    if (t_grid.size() < 4) throw ArgumentError("time grid needs at least four points");
    for (double t : t_grid)
        if (!(t > 0.0)) throw ArgumentError("time grid must be positive");
    double ratio = t_grid[1] / t_grid[0];
    if (!(ratio < 1.0)) throw ArgumentError("time grid must decrease");
    for (size_t i = 1; i + 1 < t_grid.size(); ++i) {
        double rr = t_grid[i + 1] / t_grid[i];
        if (std::abs(rr - ratio) > 1e-9 * ratio)
            throw ArgumentError("time grid must be geometric");
    }

    const auto& space = sg.measure.space();
    int dim = space.dim;
    VariationCurve curve;
    curve.t_grid = t_grid;

    if (sg.kind == SemigroupKind::classical_mehler) {
        const auto* gm = std::get_if<GaussianMeasure>(&sg.measure.impl);
        if (!gm) throw ArgumentError("classical kernel needs the gaussian measure");
        if (u.kind == BvCandidate::Kind::halfspace) {
            if ((int)u.a.size() != dim)
                throw ArgumentError("normal must match the dimension");
            // The integrand depends on x through <x, a> alone, so a marginal
            // Gauss-Hermite pass evaluates the curve to quadrature accuracy.
            double s2 = 0.0;
            for (int k = 0; k < dim; ++k)
                s2 += gm->space.eigenvalues[(size_t)k] * u.a[(size_t)k] * u.a[(size_t)k];
            if (!(s2 > 0.0)) throw ArgumentError("halfspace normal must be nonzero");
            double sigma = std::sqrt(s2);
            double ra2 = 0.0, na2 = 0.0;
            for (int k = 0; k < dim; ++k) {
                double ak = u.a[(size_t)k];
                ra2 += gm->space.eigenvalues[(size_t)k] * ak * ak;
                na2 += ak * ak;
            }
            double scale = which == GradientKind::stretched ? std::sqrt(ra2) : std::sqrt(na2);
            const auto& rule = gauss_hermite_unit(std::max(16, engine.gh_order));
            for (double t : t_grid) {
                double c = std::exp(-t), tau = std::sqrt(1.0 - c * c);
                // Quadrature variable chosen so the integrand keeps unit
                // width: the state marginal for c < tau, the kernel argument
                // for c >= tau (where the state integrand sharpens like tau).
                double acc = 0.0, value = 0.0;
                if (c < tau) {
                    for (size_t j = 0; j < rule.nodes.size(); ++j) {
                        double arg = (u.r - c * sigma * rule.nodes[j]) / (tau * sigma);
                        acc += rule.weights[j] * normal_pdf(arg);
                    }
                    value = acc * c * scale / (tau * sigma);
                } else {
                    for (size_t j = 0; j < rule.nodes.size(); ++j) {
                        double y = (u.r - tau * sigma * rule.nodes[j]) / (c * sigma);
                        acc += rule.weights[j] * normal_pdf(y);
                    }
                    value = acc * scale / sigma;
                }
                McEstimate e;
                e.value = value;
                e.std_err = 0.0;
                e.n_samples = rule.nodes.size();
                e.meta["mode"] = "gh_marginal";
                e.meta["t"] = num_str(t);
                curve.values.push_back(std::move(e));
            }
        } else if (u.kind == BvCandidate::Kind::cylinder) {
            Measure nu{*gm};
            for (double t : t_grid) {
                CylFunction pushed = mehler_push(*gm, u.cyl, t, engine.gh_order);
                auto fn = [gm, &pushed, which](const Point& x) {
                    auto g = full_gradient(gm->space, pushed, x);
                    double s = 0.0;
                    for (size_t k = 0; k < g.size(); ++k) {
                        double c = which == GradientKind::stretched
                                       ? gm->space.r_diag[k] * g[k]
                                       : g[k];
                        s += c * c;
                    }
                    return std::sqrt(s);
                };
                auto e = mc_integrate(fn, nu, engine.mc_samples, engine.rng, engine.workers);
                e.meta["mode"] = "pushed_cylinder";
                e.meta["t"] = num_str(t);
                curve.values.push_back(std::move(e));
            }
        } else {
            throw CapabilityError("classical kernel supports halfspace and cylinder candidates");
        }
    } else if (sg.kind == SemigroupKind::dirichlet_em) {
        auto uptr = std::make_shared<BvCandidate>(u);
        std::function<double(const Point&)> f = [uptr](const Point& x) {
            return bv_value(*uptr, x);
        };
        // Common outer points and common per-(point, coordinate) path noise
        // across the grid keep the Richardson differences quiet.
        uint64_t n_out = std::max<uint64_t>(8, engine.mc_samples);
        RngStream os = engine.rng.with_stream(1);
        bool weighted = sg.measure.weighted();
        std::vector<Point> xs;
        std::vector<double> wts;
        for (uint64_t j = 0; j < n_out; ++j) {
            SampleRng g = os.at_sample((uint32_t)j);
            Point x = sg.measure.sample(g);
            wts.push_back(weighted ? std::exp(sg.measure.log_weight(x)) : 1.0);
            xs.push_back(std::move(x));
        }
        for (double t : t_grid) {
            WeightedAcc acc;
            for (uint64_t j = 0; j < n_out; ++j) {
                double nsq = 0.0;
                for (int k = 0; k < dim; ++k) {
                    RngStream ps = engine.rng.with_stream(1000 + j * 1024 + (uint64_t)k);
                    auto d = dirichlet_em_partial(sg, f, t, xs[(size_t)j], k, ps);
                    double scale =
                        which == GradientKind::stretched ? space.r_diag[(size_t)k] : 1.0;
                    double dv = scale * d.value, dse = scale * d.std_err;
                    nsq += dv * dv - dse * dse;
                }
                acc.add(wts[(size_t)j], std::sqrt(std::max(0.0, nsq)));
            }
            McEstimate e;
            e.value = acc.mean();
            e.std_err = acc.std_err();
            e.n_samples = n_out;
            e.meta["mode"] = "euler_crn_fd";
            e.meta["t"] = num_str(t);
            curve.values.push_back(std::move(e));
        }
    } else {
        throw CapabilityError("semigroup variation supports the classical kernel and the euler chain");
    }

    std::vector<double> vals;
    for (const auto& e : curve.values) vals.push_back(e.value);
    curve.extrapolation = richardson_limit(vals);
    curve.stable_limit =
        curve.extrapolation.spread <= 0.02 * std::abs(curve.extrapolation.limit) + 1e-12;
    curve.monotone = true;
    for (size_t i = 0; i + 1 < curve.values.size(); ++i) {
        double slack = 4.0 * (curve.values[i].std_err + curve.values[i + 1].std_err);
        if (curve.values[i].value > curve.values[i + 1].value + slack + 1e-12)
            curve.monotone = false;
    }
    return curve;
}

InequalityReport variation_inequalities_report(const Measure& nu, const BvCandidate& u,
                                               const std::vector<std::vector<double>>& z_set,
                                               const TestFamily& scalar_fam,
                                               const TestFamily& field_fam,
                                               const AscentConfig& cfg, const RngStream& rng) {
    InequalityReport rep;
    auto sv = sup_variation(nu, u, field_fam, VariationKind::V, {}, cfg, rng.with_stream(31));
    auto s0 = sup_variation(nu, u, field_fam, VariationKind::V0, {}, cfg, rng.with_stream(37));
    rep.v = sv.lower_bound;
    rep.v0 = s0.lower_bound;
    for (size_t i = 0; i < z_set.size(); ++i) {
        auto sz = sup_variation(nu, u, scalar_fam, VariationKind::Vz, z_set[i], cfg,
                                rng.with_stream(101 + i));
        rep.vz.push_back(sz.lower_bound);
        double zn = vec_norm(z_set[i]);
        InequalityRow row;
        row.label = "V_z(" + std::to_string(i) + ") <= V |z|";
        row.lhs = sz.lower_bound.value;
        row.rhs = rep.v.value * zn;
        row.slack = 4.0 * (sz.lower_bound.std_err + rep.v.std_err * zn);
        row.pass = row.lhs <= row.rhs + row.slack;
        rep.rows.push_back(std::move(row));
    }
    double rnorm = nu.space().r_norm();
    InequalityRow row;
    row.label = "V <= V_0 |R|";
    row.lhs = rep.v.value;
    row.rhs = rep.v0.value * rnorm;
    row.slack = 4.0 * (rep.v.std_err + rep.v0.std_err * rnorm);
    row.pass = row.lhs <= row.rhs + row.slack;
    rep.rows.push_back(std::move(row));
    return rep;
}

}  // namespace bvc
