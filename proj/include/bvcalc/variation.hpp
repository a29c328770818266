#pragma once

#include <bvcalc/cylinder.hpp>
#include <bvcalc/estimate.hpp>
#include <bvcalc/measures.hpp>
#include <bvcalc/quadrature.hpp>
#include <bvcalc/rng.hpp>
#include <bvcalc/semigroups.hpp>
#include <bvcalc/spectral.hpp>

#include <span>
#include <string>
#include <vector>

namespace bvc {

enum class VariationKind { Vz, V, V0 };

// Which gradient enters the integrand: R grad (stretched) or plain grad.
enum class GradientKind { stretched, plain };

// A bounded candidate for the variation functionals. Cylinder and smoothed
// candidates carry an exact Sobolev gradient; indicator candidates only have
// pointwise values.
struct BvCandidate {
    enum class Kind { cylinder, halfspace, indicator, smoothed } kind = Kind::cylinder;
    CylFunction cyl = cyl_constant(0.0);
    std::vector<double> a;  // halfspace normal
    double r = 0.0;         // halfspace / sublevel threshold
    ScalarFunctional g;     // indicator of {g < r}
    SmoothedIndicator smoothed;
};

BvCandidate bv_cylinder(const SpectralSpace& space, CylFunction u);
BvCandidate bv_halfspace(std::vector<double> a, double r);
BvCandidate bv_indicator(ScalarFunctional g, double r);
BvCandidate bv_smoothed(SmoothedIndicator si);

double bv_value(const BvCandidate& u, const Point& x);
// Throws ArgumentError for kinds without a Sobolev gradient.
std::vector<double> bv_sobolev_gradient(const SpectralSpace& space,
                                        const BvCandidate& u, const Point& x);

// Parametric dual test functions: tanh of an affine map over polynomial and
// radial features of at most eight coordinates. The scalar arity keeps
// |phi| <= 1 structurally; the field arity rescales a stack of per-direction
// copies so that |F(x)| <= 1 holds at every point.
struct TestFamily {
    enum class Arity { scalar, field } arity = Arity::scalar;
    std::vector<int> active;      // feature coordinates, size <= 8
    std::vector<int> directions;  // field only: basis directions of the range
};

TestFamily scalar_family(std::vector<int> active);
TestFamily field_family(std::vector<int> active, std::vector<int> directions);
int family_param_count(const TestFamily& fam);

// Mean over pts of u(x) A(x, theta), where A is the adjoint pairing selected
// by kind. Fills grad_out (same length as theta) with the parameter gradient
// when nonempty. Exposed for diagnostics.
double family_objective(const Measure& nu, const BvCandidate& u, const TestFamily& fam,
                        VariationKind kind, const std::vector<double>& z,
                        std::span<const double> theta, const std::vector<Point>& pts,
                        std::span<double> grad_out);

struct AscentConfig {
    int restarts = 5;
    int steps = 500;
    uint64_t batch = 256;
    double rate = 0.05;
    uint64_t final_samples = 1u << 16;
};

struct AscentTrace {
    std::vector<double> restart_values;      // post-ascent value per restart
    std::vector<std::vector<double>> paths;  // per-step batch objective
    int winner = 0;
};

struct SupResult {
    McEstimate lower_bound;  // independent re-estimate at the winning parameters
    AscentTrace trace;
};

// Monte Carlo integral of |R grad u| (stretched) or |grad u| (plain).
McEstimate direct_variation(const Measure& nu, const BvCandidate& u, GradientKind which,
                            uint64_t n, const RngStream& rng, int workers = 1);

// Stochastic-ascent lower bound for V_z (scalar family, z required), V or V_0
// (field family). Throws IntegrityError if the objective turns non-finite.
SupResult sup_variation(const Measure& nu, const BvCandidate& u, const TestFamily& fam,
                        VariationKind kind, const std::vector<double>& z,
                        const AscentConfig& cfg, const RngStream& rng, int workers = 1);

struct VariationCurve {
    std::vector<double> t_grid;
    std::vector<McEstimate> values;
    RichardsonResult extrapolation;
    bool stable_limit = false;  // last-three spread within two percent
    bool monotone = false;      // nonincreasing in t within noise
};

// J(t) = integral of |grad T(t)u| along a geometric grid, with a Richardson
// limit from the last three points. The grid must be decreasing, geometric,
// and hold at least four points.
VariationCurve semigroup_variation(const BvCandidate& u, const SemigroupSpec& sg,
                                   const std::vector<double>& t_grid, GradientKind which,
                                   const EvalEngine& engine);

// Closed form of the halfspace curve under the classical kernel:
// exp(-t) phi(r / sigma) |Ra| / sigma (stretched) with sigma^2 = <Qa, a>.
double mehler_halfspace_variation(const GaussianMeasure& gm, const std::vector<double>& a,
                                  double r, double t, GradientKind which);

// Monte Carlo estimate of the same integrand over the full measure; a
// cross-check for the marginal quadrature used by semigroup_variation.
McEstimate mehler_halfspace_variation_mc(const GaussianMeasure& gm,
                                         const std::vector<double>& a, double r, double t,
                                         GradientKind which, uint64_t n,
                                         const RngStream& rng, int workers = 1);

struct InequalityRow {
    std::string label;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;  // four combined standard errors
    bool pass = false;
};

struct InequalityReport {
    std::vector<InequalityRow> rows;
    McEstimate v;
    McEstimate v0;
    std::vector<McEstimate> vz;
};

// Checks V_z(u) <= V(u) |z| for each z and V(u) <= V_0(u) |R| with the
// four-standard-error slack.
InequalityReport variation_inequalities_report(const Measure& nu, const BvCandidate& u,
                                               const std::vector<std::vector<double>>& z_set,
                                               const TestFamily& scalar_fam,
                                               const TestFamily& field_fam,
                                               const AscentConfig& cfg, const RngStream& rng);

}  // namespace bvc
