#include <bvcalc/errors.hpp>
#include <bvcalc/measures.hpp>

#include <cmath>
#include <mutex>
#include <optional>

namespace bvc {

double moment_b(double m, int N) {
    if (!(m >= 1.0)) throw ArgumentError("product exponent must be at least 1");
    if (N < 0) throw ArgumentError("moment order must be nonnegative");
    double tm = 2.0 * m;
    return std::pow(tm, (double)N / m) * std::tgamma((2.0 * N + 1.0) / tm) /
           std::tgamma(1.0 / tm);
}

double product_a_const(double m) {
    if (!(m >= 1.0)) throw ArgumentError("product exponent must be at least 1");
    double tm = 2.0 * m;
    return std::pow(tm, 1.0 - 1.0 / tm) / (2.0 * std::tgamma(1.0 / tm));
}

// ---- gaussian ----------------------------------------------------------------

Point GaussianMeasure::sample(SampleRng& rng) const {
    Point x;
    x.coords.resize((size_t)space.dim);
    for (int k = 0; k < space.dim; ++k)
        x.coords[(size_t)k] = space.r_diag[(size_t)k] * rng.next_normal();
    return x;
}

double GaussianMeasure::v_z(const Point& x, const std::vector<double>& z) const {
    if ((int)z.size() != space.dim || (int)x.coords.size() != space.dim)
        throw ArgumentError("dimension mismatch in v_z");
    double acc = 0.0;
    for (int k = 0; k < space.dim; ++k)
        acc += x.coords[(size_t)k] * z[(size_t)k] / space.r_diag[(size_t)k];
    return acc;
}

std::vector<double> GaussianMeasure::covariance_diag() const {
    return space.eigenvalues;
}

GaussianMeasure make_gaussian(SpectralSpace space) {
    return GaussianMeasure{std::move(space)};
}

// ---- weighted gaussian ---------------------------------------------------------

struct LogNormCache {
    std::mutex mu;
    std::optional<McEstimate> est;
};

Point WeightedGaussianMeasure::sample(SampleRng& rng) const {
    return base.sample(rng);
}

double WeightedGaussianMeasure::log_weight(const Point& x) const {
    return -2.0 * potential.value(x);
}

double WeightedGaussianMeasure::v_z(const Point& x,
                                    const std::vector<double>& z) const {
    // For the density e^{-2U} the base log derivative picks up +2 <grad U, Rz>,
    // so that integration by parts holds against the base stretching R.
    double acc = base.v_z(x, z);
    auto gu = potential.gradient(x);
    for (int k = 0; k < base.space.dim; ++k)
        acc += 2.0 * gu[(size_t)k] * base.space.r_diag[(size_t)k] * z[(size_t)k];
    return acc;
}

McEstimate WeightedGaussianMeasure::log_norm() const {
    std::lock_guard<std::mutex> lock(log_norm_cache->mu);
    if (log_norm_cache->est) return *log_norm_cache->est;
    const uint64_t seed = 0x5ca1ab1eu;
    const uint64_t stream = 0x4c4f474eu;  // reserved for the normalizer
    const size_t n = 1u << 18;
    RngStream rs{seed, stream};
    double sum = 0.0, comp = 0.0, sum2 = 0.0, comp2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
        auto g = rs.at_sample((uint32_t)i);
        Point x = base.sample(g);
        double w = std::exp(log_weight(x));
        if (!std::isfinite(w)) throw NumericError("nonfinite weight in normalizer");
        double y = w - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        double y2 = w * w - comp2;
        double t2 = sum2 + y2;
        comp2 = (t2 - sum2) - y2;
        sum2 = t2;
    }
    double mean = sum / (double)n;
    double var = (sum2 - (double)n * mean * mean) / (double)(n - 1);
    McEstimate est;
    est.value = std::log(mean);
    est.std_err = std::sqrt(var / (double)n) / mean;
    est.n_samples = n;
    est.seed = seed;
    est.meta["mode"] = "importance_sampling";
    log_norm_cache->est = est;
    return est;
}

WeightedGaussianMeasure make_weighted_gaussian(SpectralSpace space, Potential U) {
    if (U.dim != 0 && U.dim != space.dim)
        throw ArgumentError("potential dimension does not match the space");
    if (!U.value || !U.gradient)
        throw ArgumentError("weighted measure needs value and gradient of U");
    GaussianMeasure base{space};
    // Check the declared lower bound at a handful of proposal draws.
    RngStream rs{0xb07d5eedull, 0x42u};
    double tol = 1e-9 * (1.0 + std::abs(U.lower_bound));
    for (uint32_t i = 0; i < 16; ++i) {
        auto g = rs.at_sample(i);
        Point x = base.sample(g);
        if (U.value(x) < U.lower_bound - tol)
            throw ArgumentError("potential dips below its declared lower bound");
    }
    return WeightedGaussianMeasure{std::move(base), std::move(U),
                                   std::make_shared<LogNormCache>()};
}

// ---- product -------------------------------------------------------------------

double ProductMeasure::a_const() const { return product_a_const(m); }

Point ProductMeasure::sample(SampleRng& rng) const {
    Point x;
    x.coords.resize(mus.size());
    double tm = 2.0 * m;
    for (size_t k = 0; k < mus.size(); ++k) {
        double G = rng.next_gamma(1.0 / tm);
        double s = rng.next_unit() < 0.5 ? -1.0 : 1.0;
        x.coords[k] = s * std::pow(tm * mus[k] * G, 1.0 / tm);
    }
    return x;
}

double ProductMeasure::v_z(const Point& x, const std::vector<double>& z) const {
    if (z.size() != mus.size() || x.coords.size() != mus.size())
        throw ArgumentError("dimension mismatch in v_z");
    double acc = 0.0;
    for (size_t k = 0; k < mus.size(); ++k) {
        double s = x.coords[k];
        acc += space.r_diag[k] * z[k] *
               std::copysign(std::pow(std::abs(s), 2.0 * m - 1.0), s) / mus[k];
    }
    return acc;
}

double ProductMeasure::moment_b(int N) const { return bvc::moment_b(m, N); }

std::vector<double> ProductMeasure::covariance_diag() const {
    return space.eigenvalues;
}

ProductMeasure make_product(double m, std::vector<double> mus) {
    if (!(m >= 1.0)) throw ArgumentError("product exponent must be at least 1");
    if (mus.empty()) throw ArgumentError("product measure needs at least one scale");
    for (double mu : mus)
        if (!(mu > 0.0) || !std::isfinite(mu))
            throw ArgumentError("product scales must be positive");
    double b1 = moment_b(m, 1);
    std::vector<double> lambdas(mus.size());
    for (size_t k = 0; k < mus.size(); ++k)
        lambdas[k] = b1 * std::pow(mus[k], 1.0 / m);
    ProductMeasure out;
    out.m = m;
    out.mus = std::move(mus);
    out.space = SpectralSpace::from_eigenvalues(std::move(lambdas));
    return out;
}

// ---- tagged union ----------------------------------------------------------------

const SpectralSpace& Measure::space() const {
    return std::visit(
        [](const auto& v) -> const SpectralSpace& {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, WeightedGaussianMeasure>)
                return v.base.space;
            else
                return v.space;
        },
        impl);
}

int Measure::dim() const { return space().dim; }

bool Measure::weighted() const {
    return std::holds_alternative<WeightedGaussianMeasure>(impl);
}

Point Measure::sample(SampleRng& rng) const {
    return std::visit([&rng](const auto& v) { return v.sample(rng); }, impl);
}

double Measure::log_weight(const Point& x) const {
    if (auto* w = std::get_if<WeightedGaussianMeasure>(&impl))
        return w->log_weight(x);
    return 0.0;
}

double Measure::v_z(const Point& x, const std::vector<double>& z) const {
    return std::visit([&](const auto& v) { return v.v_z(x, z); }, impl);
}

std::vector<double> Measure::covariance_diag() const {
    return std::visit(
        [](const auto& v) -> std::vector<double> {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, WeightedGaussianMeasure>)
                throw CapabilityError(
                    "no closed-form covariance for weighted measures");
            else
                return v.covariance_diag();
        },
        impl);
}

// ---- adjoints ---------------------------------------------------------------------

double partial_star(const Measure& nu, const CylFunction& f,
                    const std::vector<double>& z, const Point& x) {
    const auto& sp = nu.space();
    auto mg = stretched_gradient(sp, f, x);
    double dz = 0.0;
    for (int k = 0; k < sp.dim; ++k) dz += mg[(size_t)k] * z[(size_t)k];
    return dz - nu.v_z(x, z) * f.value(x);
}

double div_m_star(const Measure& nu, const CylField& F, const Point& x) {
    double acc = 0.0;
    for (const auto& [f, z] : F.terms) acc -= partial_star(nu, f, z, x);
    return acc;
}

double div_nabla_star(const Measure& nu, const CylField& F, const Point& x) {
    const auto& sp = nu.space();
    double acc = 0.0;
    for (const auto& [f, y] : F.terms) {
        if ((int)y.size() != sp.dim)
            throw ArgumentError("field direction dimension mismatch");
        auto g = full_gradient(sp, f, x);
        double dy = 0.0;
        for (int k = 0; k < sp.dim; ++k) dy += g[(size_t)k] * y[(size_t)k];
        std::vector<double> rinv_y((size_t)sp.dim);
        for (int k = 0; k < sp.dim; ++k)
            rinv_y[(size_t)k] = y[(size_t)k] / sp.r_diag[(size_t)k];
        acc += -dy + nu.v_z(x, rinv_y) * f.value(x);
    }
    return acc;
}

}  // namespace bvc
