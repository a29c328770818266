#pragma once

#include <bvcalc/cylinder.hpp>
#include <bvcalc/estimate.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/semigroups.hpp>
#include <bvcalc/spectral.hpp>
#include <bvcalc/variation.hpp>

#include <vector>

namespace bvc {

struct Halfspace {
    std::vector<double> a;
    double r = 0.0;
};

// Sublevel set {g < r} of a differentiable level function.
struct SublevelSet {
    ScalarFunctional g;
    double r = 0.0;
};

// Perimeter of the halfspace: -(1/|Ra|) integral over {<x,a> < r} of v_{Ra}
// (stretched), or the same with a in place of Ra (plain). Returns the exact
// zero estimate when Ra vanishes.
McEstimate halfspace_perimeter(const Measure& nu, const Halfspace& h, GradientKind which,
                               const EvalEngine& engine);

struct SublevelResult {
    std::vector<double> eps_grid;
    std::vector<McEstimate> quotients;    // (mu(r) - mu(r - eps)) / eps
    std::vector<McEstimate> relaxations;  // integral of |R grad g_eps|
    RichardsonResult extrapolation;       // left derivative of mu at r
    bool stable = false;  // last-three spread within five percent of the limit
};

// One-sided difference quotients of mu(r) = nu{g < r} over a decreasing
// geometric eps grid (half-open windows {r - eps <= g < r}), their Richardson
// limit, and the relaxation integral carried by the piecewise-linear cutoff.
// A non-finite level gradient inside a window raises IntegrityError.
SublevelResult sublevel_perimeter(const Measure& nu, const SublevelSet& s,
                                  const std::vector<double>& eps_grid,
                                  const EvalEngine& engine);

// F(x) = integral over (0,1) of |sum_k x_k e_k(xi)|^p against a fixed
// Gauss-Legendre rule; p > 2. The gradient is the same rule applied to
// p |.|^{p-1} sign(.) e_k(xi).
ScalarFunctional lp_ball_functional(double p, const SpectralSpace& space, int quad_points);

}  // namespace bvc
