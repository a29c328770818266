#pragma once

#include <bvcalc/spectral.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace bvc {

// Polynomial scalar nonlinearity f with primitive Phi, Phi(0) = 0.
struct ScalarNonlinearity {
    std::vector<double> coeffs;  // f(s) = sum_j coeffs[j] s^j

    double f(double s) const;
    double fprime(double s) const;
    double Phi(double s) const;
    int degree() const;
};

// Validating factory: strictly increasing, degree above 1.
ScalarNonlinearity make_nonlinearity(std::vector<double> coeffs);

// Scalar maps describing a potential that acts pointwise through a profile,
// U(x) = integral of phi(x(xi)). grad is the map g with grad U = g(x(.)),
// gprime its derivative. Closed under the inf-convolution below.
struct ScalarMaps {
    std::function<double(double)> phi;
    std::function<double(double)> g;
    std::function<double(double)> gprime;
};

struct RdGrid {
    std::vector<double> nodes;    // xi_j in (0, 1)
    std::vector<double> weights;  // sum to 1
    std::vector<double> basis;    // basis[j * dim + k] = e_{k+1}(xi_j)
    int dim = 0;

    double profile(const Point& x, int j) const;
};

struct RdStructure {
    std::shared_ptr<const RdGrid> grid;
    ScalarMaps maps;
};

struct Potential {
    std::function<double(const Point&)> value;
    std::function<std::vector<double>(const Point&)> gradient;
    // May be empty when no second-order information is available.
    std::function<std::vector<double>(const Point&, const std::vector<double>&)>
        hessian_vec;
    std::optional<double> lip_grad;
    bool convex = true;
    double lower_bound = 0.0;
    int dim = 0;
    // Set when the potential acts through a scalar profile map.
    std::shared_ptr<const RdStructure> rd;
};

// U(x) = integral over (0,1) of Phi(x(xi)) with x(xi) expanded in the sine
// basis. quad_points must be at least 64.
Potential reaction_diffusion_potential(const ScalarNonlinearity& nl,
                                       const SpectralSpace& space,
                                       int quad_points = 256);

// U(x) = kappa/2 <S x, x> with S = diag(s_diag).
Potential quadratic_potential(double kappa, std::vector<double> s_diag);
Potential quadratic_potential(double kappa, int dim);

// Sum of even-power coordinate monomials c * x_i^p, c >= 0, p even, p >= 2.
struct CoordMonomial {
    int index = 0;
    double coeff = 0.0;
    int power = 2;
};
Potential custom_polynomial_potential(const std::vector<CoordMonomial>& terms,
                                      int dim);

// Inf-convolution with |.|^2 / (2 alpha). Structure-aware: potentials acting
// through a scalar profile stay in that class with the resolvent-composed
// maps; otherwise the proximal point is found by a damped Newton solve.
Potential moreau_yosida(const Potential& U, double alpha);

// Resolvent composition f((I + alpha f)^{-1} s) for the scalar nonlinearity.
double yosida_scalar(const ScalarNonlinearity& nl, double alpha, double s);

// Generic scalar resolvent: returns r solving r + alpha g(r) = s for a
// nondecreasing map g. Safeguarded Newton with a bisection fallback.
double scalar_resolvent(const std::function<double(double)>& g,
                        const std::function<double(double)>& gprime,
                        double alpha, double s);

}  // namespace bvc
