#include <bvcalc/cli.hpp>

#include <bvcalc/errors.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/perimeter.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/semigroups.hpp>
#include <bvcalc/variation.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace bvc {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

struct Parsed {
    std::string command;
    std::string config_path;
    uint64_t seed = 0;
    uint64_t samples = 0;
    int workers = 1;
    std::string out_path;
    bool seed_set = false;
    bool samples_set = false;
    bool workers_set = false;
};

// ---- strict JSON access ------------------------------------------------------

void check_keys(const json& j, const std::string& ctx,
                const std::vector<const char*>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) fail(ctx + ": unknown key \"" + it.key() + "\"");
    }
}

const json& need(const json& j, const char* key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end()) fail(ctx + ": missing key \"" + key + "\"");
    return *it;
}

double as_num(const json& v, const std::string& ctx) {
    if (!v.is_number()) fail(ctx + ": expected a number");
    return v.get<double>();
}

int64_t as_int(const json& v, const std::string& ctx) {
    if (!v.is_number_integer()) fail(ctx + ": expected an integer");
    return v.get<int64_t>();
}

std::string as_str(const json& v, const std::string& ctx) {
    if (!v.is_string()) fail(ctx + ": expected a string");
    return v.get<std::string>();
}

std::vector<double> as_dvec(const json& v, const std::string& ctx) {
    if (!v.is_array()) fail(ctx + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(as_num(e, ctx));
    return out;
}

std::vector<int> as_ivec(const json& v, const std::string& ctx) {
    if (!v.is_array()) fail(ctx + ": expected an array of integers");
    std::vector<int> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back((int)as_int(e, ctx));
    return out;
}

// ---- config -> domain objects ------------------------------------------------

SpectralSpace space_from(const json& s) {
    if (!s.is_object()) fail("space: expected an object");
    check_keys(s, "space", {"dim", "eigenvalues", "rule", "rho"});
    int dim = (int)as_int(need(s, "dim", "space"), "space.dim");
    if (dim < 1) fail("space.dim: must be at least 1");
    bool has_ev = s.contains("eigenvalues");
    bool has_rule = s.contains("rule");
    if (has_ev == has_rule)
        fail("space: give exactly one of \"eigenvalues\" or \"rule\"");
    if (has_ev) {
        if (s.contains("rho")) fail("space.rho: only valid with rule \"geometric\"");
        auto ev = as_dvec(s["eigenvalues"], "space.eigenvalues");
        if ((int)ev.size() != dim)
            fail("space.eigenvalues: length must equal space.dim");
        return SpectralSpace::from_eigenvalues(std::move(ev));
    }
    std::string rule = as_str(s["rule"], "space.rule");
    if (rule == "geometric") {
        double rho = as_num(need(s, "rho", "space"), "space.rho");
        return SpectralSpace::geometric(dim, rho);
    }
    if (s.contains("rho")) fail("space.rho: only valid with rule \"geometric\"");
    if (rule == "dirichlet_half_inverse") return SpectralSpace::dirichlet_half_inverse(dim);
    if (rule == "paper_lambda") return SpectralSpace::paper_lambda(dim);
    if (rule == "identity") return SpectralSpace::identity(dim);
    fail("space.rule: unknown rule \"" + rule + "\"");
}

Potential potential_from(const json& p, const SpectralSpace& space) {
    if (!p.is_object()) fail("potential: expected an object");
    std::string kind = as_str(need(p, "kind", "potential"), "potential.kind");
    if (kind == "quadratic") {
        check_keys(p, "potential", {"kind", "kappa"});
        double kappa = as_num(need(p, "kappa", "potential"), "potential.kappa");
        return quadratic_potential(kappa, space.dim);
    }
    if (kind == "reaction_diffusion") {
        check_keys(p, "potential", {"kind", "coeffs", "quad_points"});
        auto coeffs = as_dvec(need(p, "coeffs", "potential"), "potential.coeffs");
        int qp = p.contains("quad_points")
                     ? (int)as_int(p["quad_points"], "potential.quad_points")
                     : 256;
        return reaction_diffusion_potential(make_nonlinearity(std::move(coeffs)), space,
                                            qp);
    }
    if (kind == "moreau_yosida") {
        check_keys(p, "potential", {"kind", "alpha", "base"});
        double alpha = as_num(need(p, "alpha", "potential"), "potential.alpha");
        Potential base = potential_from(need(p, "base", "potential"), space);
        return moreau_yosida(base, alpha);
    }
    fail("potential.kind: unknown kind \"" + kind + "\"");
}

Measure measure_from(const json& cfg) {
    const json& m = need(cfg, "measure", "config");
    if (!m.is_object()) fail("measure: expected an object");
    std::string kind = as_str(need(m, "kind", "measure"), "measure.kind");
    if (kind == "product") {
        check_keys(m, "measure", {"kind", "m", "mus", "dim", "mu_power"});
        if (cfg.contains("space"))
            fail("config: the product measure derives its space; remove \"space\"");
        double mexp = as_num(need(m, "m", "measure"), "measure.m");
        bool has_mus = m.contains("mus");
        bool has_rule = m.contains("dim") || m.contains("mu_power");
        if (has_mus == has_rule)
            fail("measure: give exactly one of \"mus\" or \"dim\"+\"mu_power\"");
        std::vector<double> mus;
        if (has_mus) {
            mus = as_dvec(m["mus"], "measure.mus");
        } else {
            int dim = (int)as_int(need(m, "dim", "measure"), "measure.dim");
            double pw = as_num(need(m, "mu_power", "measure"), "measure.mu_power");
            if (dim < 1) fail("measure.dim: must be at least 1");
            for (int h = 1; h <= dim; ++h) mus.push_back(std::pow((double)h, -pw));
        }
        return Measure{make_product(mexp, std::move(mus))};
    }
    SpectralSpace space = space_from(need(cfg, "space", "config"));
    if (kind == "gaussian") {
        check_keys(m, "measure", {"kind"});
        return Measure{make_gaussian(std::move(space))};
    }
    if (kind == "weighted_gaussian") {
        check_keys(m, "measure", {"kind", "potential"});
        Potential U = potential_from(need(m, "potential", "measure"), space);
        return Measure{make_weighted_gaussian(std::move(space), std::move(U))};
    }
    fail("measure.kind: unknown kind \"" + kind + "\"");
}

BvCandidate candidate_from(const json& c, const SpectralSpace& space) {
    if (!c.is_object()) fail("candidate: expected an object");
    std::string kind = as_str(need(c, "kind", "candidate"), "candidate.kind");
    if (kind == "halfspace") {
        check_keys(c, "candidate", {"kind", "a", "r"});
        auto a = as_dvec(need(c, "a", "candidate"), "candidate.a");
        if ((int)a.size() != space.dim)
            fail("candidate.a: length must equal the space dimension");
        return bv_halfspace(std::move(a), as_num(need(c, "r", "candidate"), "candidate.r"));
    }
    if (kind == "constant") {
        check_keys(c, "candidate", {"kind", "c"});
        return bv_cylinder(space, cyl_constant(as_num(need(c, "c", "candidate"), "candidate.c")));
    }
    if (kind == "affine" || kind == "tanh_affine") {
        check_keys(c, "candidate", {"kind", "active", "w", "b"});
        auto act = as_ivec(need(c, "active", "candidate"), "candidate.active");
        auto w = as_dvec(need(c, "w", "candidate"), "candidate.w");
        double b = as_num(need(c, "b", "candidate"), "candidate.b");
        CylFunction f = kind == "affine" ? cyl_affine(std::move(act), std::move(w), b)
                                         : cyl_tanh_affine(std::move(act), std::move(w), b);
        return bv_cylinder(space, std::move(f));
    }
    if (kind == "radial_tanh") {
        check_keys(c, "candidate", {"kind", "active", "scale"});
        auto act = as_ivec(need(c, "active", "candidate"), "candidate.active");
        double scale = as_num(need(c, "scale", "candidate"), "candidate.scale");
        return bv_cylinder(space, cyl_radial_tanh(std::move(act), scale));
    }
    fail("candidate.kind: unknown kind \"" + kind + "\"");
}

GradientKind which_from(const json& cfg) {
    if (!cfg.contains("which")) return GradientKind::stretched;
    std::string w = as_str(cfg["which"], "which");
    if (w == "stretched") return GradientKind::stretched;
    if (w == "plain") return GradientKind::plain;
    fail("which: expected \"stretched\" or \"plain\"");
}

EmParams em_from(const json& cfg) {
    EmParams em;
    if (!cfg.contains("em_params")) return em;
    const json& e = cfg["em_params"];
    if (!e.is_object()) fail("em_params: expected an object");
    check_keys(e, "em_params", {"dt", "paths", "burn_in"});
    if (e.contains("dt")) em.dt = as_num(e["dt"], "em_params.dt");
    if (e.contains("paths")) em.paths = (uint64_t)as_int(e["paths"], "em_params.paths");
    if (e.contains("burn_in")) em.burn_in = as_int(e["burn_in"], "em_params.burn_in");
    return em;
}

// ---- shared estimators ------------------------------------------------------

// Self-normalized weighted mean per component; the error bar comes from the
// delta method around the ratio.
struct RatioAcc {
    uint64_t n = 0;
    double w_sum = 0.0, w2_sum = 0.0;
    std::vector<double> wg, wg2, w2g;

    explicit RatioAcc(size_t k) : wg(k, 0.0), wg2(k, 0.0), w2g(k, 0.0) {}

    void add(double w, const std::vector<double>& g) {
        ++n;
        w_sum += w;
        w2_sum += w * w;
        for (size_t i = 0; i < g.size(); ++i) {
            double p = w * g[i];
            wg[i] += p;
            wg2[i] += p * p;
            w2g[i] += w * p;
        }
    }
    double mean(size_t i) const { return wg[i] / w_sum; }
    double std_err(size_t i) const {
        double r = mean(i);
        double s2 = wg2[i] - 2.0 * r * w2g[i] + r * r * w2_sum;
        return std::sqrt(std::max(0.0, s2)) / w_sum;
    }
};

double double_factorial_odd(int N) {
    double v = 1.0;
    for (int j = 1; j <= N; ++j) v *= 2.0 * j - 1.0;
    return v;
}

// ---- command handlers ---------------------------------------------------------

struct RunCtx {
    uint64_t seed = 0;
    uint64_t samples = 0;
    int workers = 1;
    bool samples_set = false;
    std::vector<std::string> warnings;
};

std::vector<json> cmd_sample(const Measure& nu, const json&, RunCtx& ctx) {
    int d = nu.dim();
    RatioAcc acc((size_t)d);
    std::vector<double> g(d), x2(d, 0.0);
    double w_sum = 0.0;
    RngStream st{ctx.seed, 7};
    for (uint64_t i = 0; i < ctx.samples; ++i) {
        SampleRng r = st.at_sample((uint32_t)i);
        Point x = nu.sample(r);
        double w = std::exp(nu.log_weight(x));
        for (int k = 0; k < d; ++k) g[k] = x.coords[k];
        acc.add(w, g);
        w_sum += w;
        for (int k = 0; k < d; ++k) x2[k] += w * x.coords[k] * x.coords[k];
    }
    json j;
    std::vector<double> means(d), se(d), vars(d);
    for (int k = 0; k < d; ++k) {
        means[k] = acc.mean(k);
        se[k] = acc.std_err(k);
        vars[k] = x2[k] / w_sum - means[k] * means[k];
    }
    j["means"] = means;
    j["means_stderr"] = se;
    j["variances"] = vars;
    j["covariance_diag_theory"] = nu.covariance_diag();
    j["n_samples"] = ctx.samples;
    return {j};
}

std::vector<json> cmd_moments(const Measure& nu, const json& cfg, RunCtx& ctx) {
    auto orders = as_ivec(need(cfg, "orders", "config"), "orders");
    if (orders.empty()) fail("orders: must not be empty");
    for (int N : orders)
        if (N < 1 || N > 8) fail("orders: each entry must lie in [1, 8]");
    int d = nu.dim();
    size_t rows = orders.size() * (size_t)d;
    RatioAcc acc(rows);
    std::vector<double> g(rows);
    RngStream st{ctx.seed, 8};
    for (uint64_t i = 0; i < ctx.samples; ++i) {
        SampleRng r = st.at_sample((uint32_t)i);
        Point x = nu.sample(r);
        double w = std::exp(nu.log_weight(x));
        for (size_t a = 0; a < orders.size(); ++a)
            for (int k = 0; k < d; ++k)
                g[a * d + k] = std::pow(x.coords[k] * x.coords[k], orders[a]);
        acc.add(w, g);
    }

    const auto* pm = std::get_if<ProductMeasure>(&nu.impl);
    bool gaussian = std::holds_alternative<GaussianMeasure>(nu.impl);
    std::vector<json> lines;
    for (size_t a = 0; a < orders.size(); ++a) {
        int N = orders[a];
        json j;
        j["N"] = N;
        std::vector<double> emp(d), se(d);
        for (int k = 0; k < d; ++k) {
            emp[k] = acc.mean(a * d + k);
            se[k] = acc.std_err(a * d + k);
        }
        j["empirical"] = emp;
        j["stderr"] = se;
        if (pm != nullptr || gaussian) {
            std::vector<double> th(d);
            for (int k = 0; k < d; ++k)
                th[k] = pm != nullptr
                            ? moment_b(pm->m, N) * std::pow(pm->mus[k], N / pm->m)
                            : double_factorial_odd(N) *
                                  std::pow(nu.space().eigenvalues[k], N);
            double worst = 0.0;
            bool pass = true;
            for (int k = 0; k < d; ++k) {
                double sig = se[k] > 0.0 ? std::abs(emp[k] - th[k]) / se[k]
                                         : (emp[k] == th[k] ? 0.0 : 1e300);
                worst = std::max(worst, sig);
                pass = pass && sig <= 4.0;
            }
            j["theory"] = th;
            j["sigmas_max"] = worst;
            j["pass"] = pass;
        }
        j["n_samples"] = ctx.samples;
        lines.push_back(std::move(j));
    }
    return lines;
}

std::vector<json> cmd_ibp(const Measure& nu, const json& cfg, RunCtx& ctx) {
    int pairs = cfg.contains("pairs") ? (int)as_int(cfg["pairs"], "pairs") : 20;
    if (pairs < 1 || pairs > 1024) fail("pairs: must lie in [1, 1024]");
    int d = nu.dim();
    int arity = std::min(d, 3);
    std::vector<json> lines;
    for (int i = 0; i < pairs; ++i) {
        SampleRng gen = RngStream{ctx.seed, 900 + (uint64_t)i}.scalar();
        std::vector<int> active(arity);
        for (int j = 0; j < arity; ++j) active[j] = (i + j) % d;
        std::sort(active.begin(), active.end());
        std::vector<double> w(arity);
        for (double& v : w) v = 0.7 * gen.next_normal();
        double b = 0.3 * gen.next_normal();
        std::vector<double> z(d);
        for (double& v : z) v = gen.next_normal() / std::sqrt((double)d);
        CylFunction phi = cyl_tanh_affine(active, w, b);
        McEstimate est = mc_integrate(
            [&](const Point& x) { return partial_star(nu, phi, z, x); }, nu,
            ctx.samples, RngStream{ctx.seed, 1000 + (uint64_t)i}, ctx.workers);
        double sig = est.std_err > 0.0 ? std::abs(est.value) / est.std_err : 0.0;
        json j;
        j["pair"] = i;
        j["residual"] = est.value;
        j["stderr"] = est.std_err;
        j["sigmas"] = sig;
        j["pass"] = std::abs(est.value) <= 4.0 * est.std_err + 1e-12;
        j["n_samples"] = est.n_samples;
        lines.push_back(std::move(j));
    }
    return lines;
}

std::vector<json> cmd_variation(const Measure& nu, const json& cfg, RunCtx& ctx) {
    std::string mode = as_str(need(cfg, "mode", "config"), "mode");
    BvCandidate cand = candidate_from(need(cfg, "candidate", "config"), nu.space());
    GradientKind which = which_from(cfg);
    if (mode == "direct") {
        for (const char* k : {"vkind", "z", "family", "ascent"})
            if (cfg.contains(k))
                fail(std::string("config: \"") + k + "\" is only valid in sup mode");
        McEstimate est = direct_variation(nu, cand, which, ctx.samples,
                                          RngStream{ctx.seed, 2}, ctx.workers);
        json j;
        j["mode"] = "direct";
        j["estimate"] = est.value;
        j["stderr"] = est.std_err;
        j["n_samples"] = est.n_samples;
        return {j};
    }
    if (mode != "sup") fail("mode: expected \"direct\" or \"sup\"");

    std::string vk = as_str(need(cfg, "vkind", "config"), "vkind");
    VariationKind kind;
    if (vk == "Vz")
        kind = VariationKind::Vz;
    else if (vk == "V")
        kind = VariationKind::V;
    else if (vk == "V0")
        kind = VariationKind::V0;
    else
        fail("vkind: expected \"Vz\", \"V\" or \"V0\"");

    const json& famj = need(cfg, "family", "config");
    if (!famj.is_object()) fail("family: expected an object");
    check_keys(famj, "family", {"active", "directions"});
    auto active = as_ivec(need(famj, "active", "family"), "family.active");
    TestFamily fam;
    std::vector<double> z;
    if (kind == VariationKind::Vz) {
        if (famj.contains("directions"))
            fail("family.directions: only valid for the field kinds");
        fam = scalar_family(std::move(active));
        z = as_dvec(need(cfg, "z", "config"), "z");
        if ((int)z.size() != nu.dim()) fail("z: length must equal the dimension");
    } else {
        if (cfg.contains("z")) fail("z: only valid for vkind \"Vz\"");
        auto dirs = as_ivec(need(famj, "directions", "family"), "family.directions");
        fam = field_family(std::move(active), std::move(dirs));
    }

    AscentConfig acfg;
    if (cfg.contains("ascent")) {
        const json& a = cfg["ascent"];
        if (!a.is_object()) fail("ascent: expected an object");
        check_keys(a, "ascent", {"restarts", "steps", "batch", "rate", "final_samples"});
        if (a.contains("restarts")) acfg.restarts = (int)as_int(a["restarts"], "ascent.restarts");
        if (a.contains("steps")) acfg.steps = (int)as_int(a["steps"], "ascent.steps");
        if (a.contains("batch")) acfg.batch = (uint64_t)as_int(a["batch"], "ascent.batch");
        if (a.contains("rate")) acfg.rate = as_num(a["rate"], "ascent.rate");
        if (a.contains("final_samples"))
            acfg.final_samples = (uint64_t)as_int(a["final_samples"], "ascent.final_samples");
    }
    if (ctx.samples_set)
        ctx.warnings.push_back(
            "sup mode sizes its draws from ascent.batch and ascent.final_samples; "
            "--samples is ignored");
    SupResult res = sup_variation(nu, cand, fam, kind, z, acfg, RngStream{ctx.seed, 3},
                                  ctx.workers);
    json j;
    j["mode"] = "sup";
    j["vkind"] = vk;
    j["estimate"] = res.lower_bound.value;
    j["stderr"] = res.lower_bound.std_err;
    j["n_samples"] = res.lower_bound.n_samples;
    j["restart_values"] = res.trace.restart_values;
    j["winner"] = res.trace.winner;
    return {j};
}

std::vector<json> cmd_perimeter(const Measure& nu, const json& cfg, RunCtx& ctx) {
    const json& s = need(cfg, "set", "config");
    if (!s.is_object()) fail("set: expected an object");
    std::string kind = as_str(need(s, "kind", "set"), "set.kind");
    GradientKind which = which_from(cfg);
    EvalEngine eng{RngStream{ctx.seed, 4}, ctx.samples, 32, ctx.workers};

    if (kind == "halfspace") {
        check_keys(s, "set", {"kind", "a", "r"});
        if (cfg.contains("eps_grid")) fail("eps_grid: only valid for sublevel sets");
        Halfspace h{as_dvec(need(s, "a", "set"), "set.a"),
                    as_num(need(s, "r", "set"), "set.r")};
        if ((int)h.a.size() != nu.dim())
            fail("set.a: length must equal the dimension");
        McEstimate est = halfspace_perimeter(nu, h, which, eng);
        json j;
        j["estimate"] = est.value;
        j["stderr"] = est.std_err;
        j["n_samples"] = est.n_samples;
        return {j};
    }

    if (which != GradientKind::stretched)
        fail("which: sublevel perimeters are defined through the stretched gradient");
    SublevelSet sl;
    if (kind == "lp_sublevel") {
        check_keys(s, "set", {"kind", "p", "r", "quad_points"});
        double p = as_num(need(s, "p", "set"), "set.p");
        int qp = s.contains("quad_points") ? (int)as_int(s["quad_points"], "set.quad_points") : 64;
        sl.g = lp_ball_functional(p, nu.space(), qp);
        sl.r = as_num(need(s, "r", "set"), "set.r");
    } else if (kind == "norm2_sublevel") {
        check_keys(s, "set", {"kind", "r"});
        sl.g.value = [](const Point& x) {
            double acc = 0.0;
            for (double v : x.coords) acc += v * v;
            return acc;
        };
        sl.g.gradient = [](const Point& x) {
            std::vector<double> out(x.coords.size());
            for (size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * x.coords[i];
            return out;
        };
        sl.r = as_num(need(s, "r", "set"), "set.r");
    } else {
        fail("set.kind: unknown kind \"" + kind + "\"");
    }
    auto eps_grid = as_dvec(need(cfg, "eps_grid", "config"), "eps_grid");
    SublevelResult res = sublevel_perimeter(nu, sl, eps_grid, eng);
    std::vector<json> lines;
    for (size_t i = 0; i < res.eps_grid.size(); ++i) {
        json j;
        j["eps"] = res.eps_grid[i];
        j["quotient"] = res.quotients[i].value;
        j["quotient_stderr"] = res.quotients[i].std_err;
        j["relaxation"] = res.relaxations[i].value;
        j["relaxation_stderr"] = res.relaxations[i].std_err;
        j["n_samples"] = res.quotients[i].n_samples;
        lines.push_back(std::move(j));
    }
    json tail;
    tail["limit"] = res.extrapolation.limit;
    tail["order"] = res.extrapolation.order;
    tail["spread"] = res.extrapolation.spread;
    tail["stable"] = res.stable;
    lines.push_back(std::move(tail));
    return lines;
}

std::vector<json> cmd_semigroup(const Measure& nu, const json& cfg, RunCtx& ctx) {
    std::string kn = as_str(need(cfg, "kernel", "config"), "kernel");
    SemigroupKind kind;
    if (kn == "classical_mehler")
        kind = SemigroupKind::classical_mehler;
    else if (kn == "drifted_ou")
        kind = SemigroupKind::drifted_ou;
    else if (kn == "dirichlet_em")
        kind = SemigroupKind::dirichlet_em;
    else
        fail("kernel: unknown kernel \"" + kn + "\"");
    SemigroupSpec sg = make_semigroup(kind, nu, em_from(cfg));
    BvCandidate cand = candidate_from(need(cfg, "candidate", "config"), nu.space());
    auto t_grid = as_dvec(need(cfg, "t_grid", "config"), "t_grid");
    int gh = cfg.contains("gh_order") ? (int)as_int(cfg["gh_order"], "gh_order") : 32;
    if (gh < 1 || gh > 64) fail("gh_order: must lie in [1, 64]");
    EvalEngine eng{RngStream{ctx.seed, 5}, ctx.samples, gh, ctx.workers};
    VariationCurve curve = semigroup_variation(cand, sg, t_grid, which_from(cfg), eng);
    std::vector<json> lines;
    for (size_t i = 0; i < curve.t_grid.size(); ++i) {
        json j;
        j["t"] = curve.t_grid[i];
        j["value"] = curve.values[i].value;
        j["stderr"] = curve.values[i].std_err;
        j["n_samples"] = curve.values[i].n_samples;
        lines.push_back(std::move(j));
    }
    json tail;
    tail["limit"] = curve.extrapolation.limit;
    tail["order"] = curve.extrapolation.order;
    tail["spread"] = curve.extrapolation.spread;
    tail["stable"] = curve.stable_limit;
    tail["monotone"] = curve.monotone;
    lines.push_back(std::move(tail));
    return lines;
}

std::vector<json> cmd_commutation(const Measure& nu, const json& cfg, RunCtx& ctx) {
    if (!nu.weighted())
        fail("commutation: needs a weighted_gaussian measure");
    BvCandidate cand = candidate_from(need(cfg, "candidate", "config"), nu.space());
    if (cand.kind != BvCandidate::Kind::cylinder)
        fail("candidate: commutation needs a smooth cylinder candidate");
    int k = (int)as_int(need(cfg, "k", "config"), "k");
    if (k < 0 || k >= nu.dim()) fail("k: must index a coordinate");
    double t = as_num(need(cfg, "t", "config"), "t");
    if (!(t > 0.0)) fail("t: must be positive");
    int probes = cfg.contains("probes") ? (int)as_int(cfg["probes"], "probes") : 4;
    if (probes < 1 || probes > 64) fail("probes: must lie in [1, 64]");
    EmParams em = em_from(cfg);
    SemigroupSpec sg = make_semigroup(SemigroupKind::dirichlet_em, nu, em);
    GaussianMeasure base = make_gaussian(nu.space());
    std::vector<Point> pts;
    RngStream pst{ctx.seed, 40};
    for (int j = 0; j < probes; ++j) {
        SampleRng r = pst.at_sample((uint32_t)j);
        pts.push_back(base.sample(r));
    }
    if (ctx.samples_set)
        ctx.warnings.push_back(
            "the path budget comes from em_params.paths; --samples is ignored");
    CommutationResult res =
        commutation_defect(sg, cand.cyl, k, t, pts, RngStream{ctx.seed, 41});
    json j;
    j["k"] = k;
    j["t"] = t;
    j["lhs"] = res.lhs.value;
    j["lhs_stderr"] = res.lhs.std_err;
    j["rhs"] = res.rhs.value;
    j["rhs_stderr"] = res.rhs.std_err;
    j["defect"] = res.defect.value;
    j["defect_stderr"] = res.defect.std_err;
    j["n_samples"] = em.paths;
    return {j};
}

// ---- driver -------------------------------------------------------------------

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file \"" + path + "\"");
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        fail(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) fail("config: expected a JSON object");
    return j;
}

int execute(const Parsed& p) {
    auto t0 = std::chrono::steady_clock::now();
    json cfg = load_config(p.config_path);

    const json& sv = need(cfg, "schema_version", "config");
    if (!sv.is_number_integer() || sv.get<int64_t>() != 1)
        fail("config.schema_version: expected the integer 1");

    std::vector<const char*> allowed = {"schema_version", "seed", "samples",
                                        "workers",        "space", "measure"};
    auto extend = [&](std::initializer_list<const char*> ks) {
        for (const char* k : ks) allowed.push_back(k);
    };
    if (p.command == "moments") extend({"orders"});
    else if (p.command == "ibp-check") extend({"pairs"});
    else if (p.command == "variation")
        extend({"mode", "candidate", "which", "vkind", "z", "family", "ascent"});
    else if (p.command == "perimeter") extend({"set", "which", "eps_grid"});
    else if (p.command == "semigroup")
        extend({"kernel", "candidate", "t_grid", "which", "em_params", "gh_order"});
    else if (p.command == "commutation")
        extend({"candidate", "k", "t", "probes", "em_params"});
    check_keys(cfg, "config", allowed);

    RunCtx ctx;
    ctx.seed = p.seed_set ? p.seed
                          : cfg.contains("seed") ? (uint64_t)as_int(cfg["seed"], "seed") : 0;
    ctx.samples = p.samples_set
                      ? p.samples
                      : cfg.contains("samples") ? (uint64_t)as_int(cfg["samples"], "samples")
                                                : 65536;
    ctx.workers = p.workers_set
                      ? p.workers
                      : cfg.contains("workers") ? (int)as_int(cfg["workers"], "workers") : 1;
    ctx.samples_set = p.samples_set || cfg.contains("samples");
    if (ctx.samples < 2) fail("samples: must be at least 2");
    if (ctx.workers < 1 || ctx.workers > 1024) fail("workers: must lie in [1, 1024]");

    Measure nu = measure_from(cfg);

    std::vector<json> lines;
    if (p.command == "sample") lines = cmd_sample(nu, cfg, ctx);
    else if (p.command == "moments") lines = cmd_moments(nu, cfg, ctx);
    else if (p.command == "ibp-check") lines = cmd_ibp(nu, cfg, ctx);
    else if (p.command == "variation") lines = cmd_variation(nu, cfg, ctx);
    else if (p.command == "perimeter") lines = cmd_perimeter(nu, cfg, ctx);
    else if (p.command == "semigroup") lines = cmd_semigroup(nu, cfg, ctx);
    else lines = cmd_commutation(nu, cfg, ctx);

    double elapsed =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    json base;
    base["command"] = p.command;
    base["schema_version"] = 1;
    base["seed"] = ctx.seed;
    base["workers"] = ctx.workers;
    base["version"] = kCliVersion;
    base["warnings"] = ctx.warnings;
    base["config_echo"] = cfg;
    base["elapsed_ms"] = elapsed;

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!p.out_path.empty()) {
        file.open(p.out_path, std::ios::trunc);
        if (!file) fail("cannot open --out path \"" + p.out_path + "\"");
        os = &file;
    }
    for (json& l : lines) {
        l.update(base);
        (*os) << l.dump() << '\n';
    }
    os->flush();
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    Parsed p;
    CLI::App app{"finite-dimensional BV calculus runs", "bvcli"};
    app.require_subcommand(1);
    const std::pair<const char*, const char*> cmds[] = {
        {"sample", "draw from the configured measure and report coordinate statistics"},
        {"moments", "even coordinate moments against their closed forms"},
        {"ibp-check", "integration-by-parts residuals for random test pairs"},
        {"variation", "direct or ascent-based variation functionals"},
        {"perimeter", "halfspace and sublevel-set perimeters"},
        {"semigroup", "variation curve along a semigroup time grid"},
        {"commutation", "derivative-semigroup exchange defect"},
    };
    for (const auto& c : cmds) {
        CLI::App* sub = app.add_subcommand(c.first, c.second);
        sub->add_option("--config", p.config_path, "path to the JSON run configuration")
            ->required();
        sub->add_option("--seed", p.seed, "master seed (default 0)");
        sub->add_option("--samples", p.samples, "Monte Carlo sample budget");
        sub->add_option("--workers", p.workers, "worker shards; values never depend on this");
        sub->add_option("--out", p.out_path, "output path for JSON lines (default stdout)");
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    CLI::App* sub = app.get_subcommands().front();
    p.command = sub->get_name();
    p.seed_set = sub->count("--seed") > 0;
    p.samples_set = sub->count("--samples") > 0;
    p.workers_set = sub->count("--workers") > 0;

    try {
        return execute(p);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const CapabilityError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace bvc
