#pragma once

#include <bvcalc/cylinder.hpp>
#include <bvcalc/estimate.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/quadrature_rules.hpp>
#include <bvcalc/rng.hpp>

#include <functional>
#include <vector>

namespace bvc {

// Seeded Monte Carlo integral of fn against nu. Sample i always consumes the
// substream (seed, stream, i), so the result is bit-identical for every
// worker count. Weighted measures go through a self-normalized ratio with a
// delta-method error bar; effective sample size lands in meta["ess"].
// Non-finite integrand values are rejected; more than 0.1% of them is an
// integrity failure.
McEstimate mc_integrate(const std::function<double(const Point&)>& fn,
                        const Measure& nu, uint64_t n, const RngStream& rng,
                        int workers = 1);

// Tensor Gauss-Hermite over the active coordinates of a cylindrical function;
// exact for polynomial degree below 2 * order per dimension. At most 4 active
// dimensions, order at most 64.
double gh_integrate(const CylFunction& f, const GaussianMeasure& nu, int order);

double normal_cdf(double x);
double normal_pdf(double x);

// Extrapolation to step 0 from three values on a step sequence t, t/2, t/4,
// with the convergence order estimated from the ratios.
struct RichardsonResult {
    double limit = 0.0;
    double order = 0.0;
    double spread = 0.0;  // |last value - limit|
};
RichardsonResult richardson_limit(const std::vector<double>& values);

// One-sample Kolmogorov-Smirnov distance against a reference cdf.
double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf);

}  // namespace bvc
