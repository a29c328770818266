#include <bvcalc/errors.hpp>
#include <bvcalc/quadrature_rules.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <mutex>

namespace bvc {

namespace {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the
// three-term recurrence, weights are mu0 * (first eigenvector row)^2.
QuadRule golub_welsch(int order, double mu0,
                      const std::function<double(int)>& beta) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        double b = std::sqrt(beta(k));
        J(k, k - 1) = b;
        J(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    QuadRule rule;
    rule.nodes.resize((size_t)order);
    rule.weights.resize((size_t)order);
    for (int k = 0; k < order; ++k) {
        rule.nodes[(size_t)k] = es.eigenvalues()(k);
        double v0 = es.eigenvectors()(0, k);
        rule.weights[(size_t)k] = mu0 * v0 * v0;
    }
    return rule;
}

}  // namespace

const QuadRule& gauss_legendre_01(int order) {
    if (order < 1) throw ArgumentError("quadrature order must be positive");
    static std::map<int, QuadRule> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) {
        // Legendre on [-1, 1]: beta_k = k^2 / (4k^2 - 1), mu0 = 2.
        QuadRule r = golub_welsch(order, 2.0, [](int k) {
            return (double)k * k / (4.0 * k * k - 1.0);
        });
        for (auto& x : r.nodes) x = 0.5 * (x + 1.0);
        for (auto& w : r.weights) w *= 0.5;
        it = cache.emplace(order, std::move(r)).first;
    }
    return it->second;
}

const QuadRule& gauss_hermite_unit(int order) {
    if (order < 1) throw ArgumentError("quadrature order must be positive");
    static std::map<int, QuadRule> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) {
        // Probabilists' Hermite: beta_k = k, mu0 = 1 (unit normal mass).
        QuadRule r = golub_welsch(order, 1.0, [](int k) { return (double)k; });
        it = cache.emplace(order, std::move(r)).first;
    }
    return it->second;
}

}  // namespace bvc

#include <bvcalc/quadrature.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <exception>
#include <span>
#include <thread>

namespace bvc {

namespace {

constexpr uint64_t kChunk = 8192;

struct Kahan {
    double s = 0.0, c = 0.0;
    void add(double v) {
        double y = v - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
};

// Welford accumulator; exact zero variance for constant streams.
struct Welford {
    uint64_t n = 0;
    double mean = 0.0, m2 = 0.0;
    void add(double f) {
        ++n;
        double d = f - mean;
        mean += d / (double)n;
        m2 += d * (f - mean);
    }
    void merge(const Welford& b) {
        if (b.n == 0) return;
        if (n == 0) {
            *this = b;
            return;
        }
        double d = b.mean - mean;
        uint64_t nn = n + b.n;
        m2 += b.m2 + d * d * (double)n * (double)b.n / (double)nn;
        mean += d * (double)b.n / (double)nn;
        n = nn;
    }
};

struct ChunkAcc {
    uint64_t rejected = 0, accepted = 0;
    Welford plain;
    // Self-normalized ratio accumulators: w, wf, w^2, w^2 f, w^2 f^2.
    Kahan w, wf, w2, w2f, w2f2;
};

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

McEstimate mc_integrate(const std::function<double(const Point&)>& fn,
                        const Measure& nu, uint64_t n, const RngStream& rng,
                        int workers) {
    if (n < 2) throw ArgumentError("mc_integrate needs at least 2 samples");
    if (n > 0xffffffffull)
        throw ArgumentError("sample count exceeds substream capacity");
    if (workers < 1 || workers > 256)
        throw ArgumentError("worker count out of range");
    const bool weighted = nu.weighted();
    const uint64_t nchunks = (n + kChunk - 1) / kChunk;
    std::vector<ChunkAcc> acc(nchunks);

    auto run_chunk = [&](uint64_t ci) {
        ChunkAcc& a = acc[ci];
        uint64_t lo = ci * kChunk, hi = std::min(n, lo + kChunk);
        for (uint64_t i = lo; i < hi; ++i) {
            SampleRng g = rng.at_sample((uint32_t)i);
            Point x = nu.sample(g);
            double fv = fn(x);
            if (weighted) {
                double wv = std::exp(nu.log_weight(x));
                if (!std::isfinite(fv) || !std::isfinite(wv)) {
                    ++a.rejected;
                    continue;
                }
                ++a.accepted;
                a.w.add(wv);
                a.wf.add(wv * fv);
                a.w2.add(wv * wv);
                a.w2f.add(wv * wv * fv);
                a.w2f2.add(wv * wv * fv * fv);
            } else {
                if (!std::isfinite(fv)) {
                    ++a.rejected;
                    continue;
                }
                ++a.accepted;
                a.plain.add(fv);
            }
        }
    };

    if (workers == 1) {
        for (uint64_t ci = 0; ci < nchunks; ++ci) run_chunk(ci);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errs((size_t)workers);
        for (int t = 0; t < workers; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    for (uint64_t ci = (uint64_t)t; ci < nchunks;
                         ci += (uint64_t)workers)
                        run_chunk(ci);
                } catch (...) {
                    errs[(size_t)t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }

    uint64_t rejected = 0, accepted = 0;
    for (const auto& a : acc) {
        rejected += a.rejected;
        accepted += a.accepted;
    }
    if (rejected * 1000 > n)
        throw IntegrityError("more than 0.1% of integrand evaluations rejected");

    McEstimate est;
    est.seed = rng.seed;
    est.n_samples = accepted;
    if (rejected > 0) est.meta["rejected"] = std::to_string(rejected);

    if (!weighted) {
        Welford total;
        for (const auto& a : acc) total.merge(a.plain);
        est.value = total.mean;
        double var = total.n > 1 ? std::max(0.0, total.m2) / (double)(total.n - 1)
                                 : 0.0;
        est.std_err = std::sqrt(var / (double)total.n);
        est.meta["mode"] = "exact_sampler";
        return est;
    }

    Kahan w, wf, w2, w2f, w2f2;
    for (const auto& a : acc) {
        w.add(a.w.s);
        wf.add(a.wf.s);
        w2.add(a.w2.s);
        w2f.add(a.w2f.s);
        w2f2.add(a.w2f2.s);
    }
    if (!(w.s > 0.0)) throw IntegrityError("importance weights sum to zero");
    double m = wf.s / w.s;
    double num = std::max(0.0, w2f2.s - 2.0 * m * w2f.s + m * m * w2.s);
    est.value = m;
    est.std_err = std::sqrt(num) / w.s;
    double ess = w.s * w.s / w2.s;
    est.meta["mode"] = "importance_sampling";
    est.meta["ess"] = fmt_g17(ess);
    if (ess < 0.1 * (double)accepted)
        est.meta["warning"] = "low_effective_sample_size";
    return est;
}

double gh_integrate(const CylFunction& f, const GaussianMeasure& nu, int order) {
    if (order < 1 || order > 64)
        throw ArgumentError("gauss-hermite order must lie in [1, 64]");
    const auto& act = f.active_indices();
    int k = (int)act.size();
    if (k > 4)
        throw CapabilityError("gauss-hermite supports at most 4 active dimensions");
    for (int idx : act)
        if (idx < 0 || idx >= nu.space.dim)
            throw ArgumentError("active index outside the space");
    if (k == 0) return f.value_packed({});

    const QuadRule& rule = gauss_hermite_unit(order);
    std::array<double, 4> scale{};
    for (int j = 0; j < k; ++j)
        scale[(size_t)j] = nu.space.r_diag[(size_t)act[(size_t)j]];
    std::array<int, 4> pos{};
    std::array<double, 4> u{};
    Kahan sum;
    for (;;) {
        double wprod = 1.0;
        for (int j = 0; j < k; ++j) {
            u[(size_t)j] = scale[(size_t)j] * rule.nodes[(size_t)pos[(size_t)j]];
            wprod *= rule.weights[(size_t)pos[(size_t)j]];
        }
        sum.add(wprod * f.value_packed(std::span<const double>(u.data(), (size_t)k)));
        int j = 0;
        while (j < k && ++pos[(size_t)j] >= order) pos[(size_t)j++] = 0;
        if (j == k) break;
    }
    return sum.s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) * 0.39894228040143267794;
}

RichardsonResult richardson_limit(const std::vector<double>& values) {
    if (values.size() < 3)
        throw ArgumentError("richardson extrapolation needs three values");
    size_t n = values.size();
    double v1 = values[n - 3], v2 = values[n - 2], v3 = values[n - 1];
    double d1 = v1 - v2, d2 = v2 - v3;
    RichardsonResult out;
    if (std::abs(d2) < 1e-300) {
        out.limit = v3;
        out.order = 0.0;
        out.spread = std::abs(d1);
        return out;
    }
    double r = d1 / d2;
    out.order = r > 0.0 ? std::log2(r) : 0.0;
    if (r > 1.05) {
        out.limit = v3 - d2 / (r - 1.0);
        out.spread = std::abs(v3 - out.limit);
    } else {
        // Not visibly contracting; report the last value and an honest spread.
        out.limit = v3;
        out.spread = std::abs(d2);
    }
    return out;
}

double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf) {
    if (samples.empty()) throw ArgumentError("empty sample for ks statistic");
    std::sort(samples.begin(), samples.end());
    size_t n = samples.size();
    double d = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double c = cdf(samples[i]);
        d = std::max(d, std::abs(c - (double)(i + 1) / (double)n));
        d = std::max(d, std::abs(c - (double)i / (double)n));
    }
    return d;
}

}  // namespace bvc
