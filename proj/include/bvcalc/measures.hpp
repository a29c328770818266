#pragma once

#include <bvcalc/cylinder.hpp>
#include <bvcalc/estimate.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/rng.hpp>
#include <bvcalc/spectral.hpp>

#include <memory>
#include <variant>
#include <vector>

namespace bvc {

// Even moment of the unit-scale scalar marginal: E|xi|^{2N} = b_N, with
// b_N = (2m)^{N/m} Gamma((2N+1)/(2m)) / Gamma(1/(2m)).
double moment_b(double m, int N);

// Density normalizer a = (2m)^{1 - 1/(2m)} / (2 Gamma(1/(2m))).
double product_a_const(double m);

struct GaussianMeasure {
    SpectralSpace space;

    Point sample(SampleRng& rng) const;
    double v_z(const Point& x, const std::vector<double>& z) const;
    std::vector<double> covariance_diag() const;
};

struct LogNormCache;

// nu = e^{-2U} gamma / Z. Sampling draws the base Gaussian proposal; the
// importance weight is exposed separately via log_weight.
struct WeightedGaussianMeasure {
    GaussianMeasure base;
    Potential potential;
    std::shared_ptr<LogNormCache> log_norm_cache;

    Point sample(SampleRng& rng) const;
    double log_weight(const Point& x) const;  // -2 U(x)
    double v_z(const Point& x, const std::vector<double>& z) const;
    // log of the normalizer integral, estimated lazily once and cached.
    McEstimate log_norm() const;
};

// Coordinates are independent with density a mu^{-1/(2m)} exp(-|s|^{2m}/(2m mu)).
struct ProductMeasure {
    double m = 1.0;
    std::vector<double> mus;
    SpectralSpace space;  // eigenvalues b_1 mu_k^{1/m}

    double a_const() const;
    Point sample(SampleRng& rng) const;
    double v_z(const Point& x, const std::vector<double>& z) const;
    double moment_b(int N) const;
    std::vector<double> covariance_diag() const;
};

GaussianMeasure make_gaussian(SpectralSpace space);
WeightedGaussianMeasure make_weighted_gaussian(SpectralSpace space, Potential U);
ProductMeasure make_product(double m, std::vector<double> mus);

// Tagged union over the three families.
struct Measure {
    std::variant<GaussianMeasure, WeightedGaussianMeasure, ProductMeasure> impl;

    const SpectralSpace& space() const;
    int dim() const;
    bool weighted() const;
    Point sample(SampleRng& rng) const;
    double log_weight(const Point& x) const;  // 0 for exact samplers
    double v_z(const Point& x, const std::vector<double>& z) const;
    std::vector<double> covariance_diag() const;
};

// <R grad f, z> - v_z f at x.
double partial_star(const Measure& nu, const CylFunction& f,
                    const std::vector<double>& z, const Point& x);

// Adjoint divergence of a finite-rank field under the stretched gradient:
// sum_i (-<R grad f_i, z_i> + v_{z_i} f_i).
double div_m_star(const Measure& nu, const CylField& F, const Point& x);

// Adjoint divergence under the plain gradient:
// sum_i (-<grad f_i, y_i> + v_{R^{-1} y_i} f_i).
double div_nabla_star(const Measure& nu, const CylField& F, const Point& x);

}  // namespace bvc
