#pragma once

#include <bvcalc/cylinder.hpp>
#include <bvcalc/estimate.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/potentials.hpp>
#include <bvcalc/rng.hpp>
#include <bvcalc/spectral.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace bvc {

// Budget for deterministic kernel evaluations: tensor quadrature while the
// core stays narrow (arity <= 4), sampling beyond that.
struct EvalEngine {
    RngStream rng{};
    uint64_t mc_samples = 65536;
    int gh_order = 32;
    int workers = 1;
};

enum class SemigroupKind { classical_mehler, drifted_ou, dirichlet_em };

// Euler integrator knobs. burn_in < 0 asks for the default, 10 relaxation
// times of the slowest coordinate.
struct EmParams {
    double dt = 1e-3;
    int64_t burn_in = -1;
    uint64_t paths = 10000;
};

struct SemigroupSpec {
    SemigroupKind kind = SemigroupKind::classical_mehler;
    Measure measure;
    EmParams em;
};

// Validates the measure/kind pairing: the Euler semigroup needs a weighted
// Gaussian measure, the two kernel semigroups a plain Gaussian one.
SemigroupSpec make_semigroup(SemigroupKind kind, Measure measure, EmParams em = {});

// T(t)f(x) = E f(e^{-t} x + sqrt(1 - e^{-2t}) Y), Y drawn from the measure.
double mehler_apply(const GaussianMeasure& gm, const CylFunction& f, double t,
                    const Point& x, const EvalEngine& engine = {});
// Exact x_k-derivative of the kernel representation (chain rule through the
// core gradient). Zero for inactive coordinates.
double mehler_partial(const GaussianMeasure& gm, const CylFunction& f, double t,
                      const Point& x, int k, const EvalEngine& engine = {});
// T(t)f as a cylindrical function over the same active set, with the exact
// pushed-forward gradient e^{-t} T(t) grad f.
CylFunction mehler_push(const GaussianMeasure& gm, const CylFunction& f, double t,
                        int gh_order = 32);

// Kernel with per-coordinate mean e^{-t/(2 lambda_k)} x_k and variance
// lambda_k (1 - e^{-t/lambda_k}).
double drifted_ou_apply(const GaussianMeasure& gm, const CylFunction& f, double t,
                        const Point& x, const EvalEngine& engine = {});
double drifted_ou_partial(const GaussianMeasure& gm, const CylFunction& f, double t,
                          const Point& x, int k, const EvalEngine& engine = {});

// Closed forms for the halfspace indicator {<x, a> < r} under the classical
// kernel: value Phi((r - e^{-t}<x,a>)/(tau sigma_a)) and its x-gradient.
double mehler_halfspace_value(const GaussianMeasure& gm, const std::vector<double>& a,
                              double r, double t, const Point& x);
std::vector<double> mehler_halfspace_gradient(const GaussianMeasure& gm,
                                              const std::vector<double>& a, double r,
                                              double t, const Point& x);

// Path average of f(X_t) for dX = (AX - grad U(X)) dt + dW, A = -(2Q)^{-1},
// by splitting steps: explicit Euler for -grad U, exact flow for the linear
// part. Paths blowing past the overflow guard are dropped and counted; more
// than 0.1% of them raises IntegrityError.
McEstimate dirichlet_em_apply(const SemigroupSpec& sg,
                              const std::function<double(const Point&)>& f, double t,
                              const Point& x, const RngStream& rng);

// d/dx_k of the path average by central differences with shared noise,
// step 1e-3 (1 + |x_k|).
McEstimate dirichlet_em_partial(const SemigroupSpec& sg,
                                const std::function<double(const Point&)>& f, double t,
                                const Point& x, int k, const RngStream& rng);

struct CoupledEstimate {
    McEstimate at_x;
    McEstimate at_y;
    McEstimate diff;  // mean of f(X_t) - f(Y_t) under shared noise
};

// Two starts driven by the same Brownian increments.
CoupledEstimate dirichlet_em_coupled(const SemigroupSpec& sg,
                                     const std::function<double(const Point&)>& f,
                                     double t, const Point& x, const Point& y,
                                     const RngStream& rng);

// Endpoints of independent chains run for the burn-in window from the origin;
// approximate draws from the invariant measure.
std::vector<Point> em_invariant_sample(const SemigroupSpec& sg, uint64_t count,
                                       const RngStream& rng);

struct CommutationResult {
    McEstimate lhs;     // d_k T(t)f - e^{-t/(2 lambda_k)} T(t) d_k f
    McEstimate rhs;     // -int_0^t e^{-(t-s)/(2 lambda_k)} T(t-s)<D2U e_k, grad T(s)f> ds
    McEstimate defect;  // lhs - rhs, averaged over the probe points
};

// Both sides of the derivative-semigroup exchange identity for the Euler
// semigroup, probe-averaged. Needs a Hessian-capable potential. The time
// integral uses Gauss-Legendre on (0, t) with nested path estimates; the
// inner gradient enters linearly, so the nesting stays unbiased.
CommutationResult commutation_defect(const SemigroupSpec& sg, const CylFunction& f,
                                     int k, double t, const std::vector<Point>& probes,
                                     const RngStream& rng);

// Average of U over frozen mollification nodes: x -> mean_j U(P_n x - eps y_j)
// with y_j drawn once from a symmetric product bump on the unit box (stored
// with their negatives, so odd moments cancel exactly). Smooth, convex when U
// is, same gradient Lipschitz budget.
Potential appendix_mollified_potential(const Potential& U, int n, double eps,
                                       int nodes = 128);

}  // namespace bvc
