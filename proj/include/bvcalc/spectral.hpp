#pragma once

#include <string>
#include <vector>

namespace bvc {

// Galerkin truncation of the covariance spectrum: dimension n, eigenvalues
// lambda_k of Q, and the diagonal of R = Q^{1/2}.
struct SpectralSpace {
    int dim = 0;
    std::vector<double> eigenvalues;  // lambda_1..lambda_n, all > 0
    std::vector<double> r_diag;       // sqrt(lambda_k)

    static SpectralSpace from_eigenvalues(std::vector<double> lambdas);
    // lambda_k = 1 / (2 k^2 pi^2): eigenvalues of (-2A)^{-1} for the Dirichlet
    // Laplacian A on (0,1). Default preset.
    static SpectralSpace dirichlet_half_inverse(int n);
    // lambda_k = (k pi)^{-2}: the heat-kernel normalization used by some
    // references for the same operator.
    static SpectralSpace paper_lambda(int n);
    // lambda_k = rho^{k-1}.
    static SpectralSpace geometric(int n, double rho);
    // lambda_k = 1 (standard Gaussian block, handy in tests).
    static SpectralSpace identity(int n);

    // Operator norm of R on the truncation: max sqrt(lambda_k).
    double r_norm() const;
};

struct Point {
    std::vector<double> coords;
    int dim() const { return (int)coords.size(); }
};

// Coordinate truncation P_{n'}: zeroes coordinates beyond n'. Idempotent.
Point project(const SpectralSpace& space, const Point& x, int n_prime);

// Orthonormal sine basis of L^2(0,1): e_k(xi) = sqrt(2) sin(k pi xi), k >= 1.
// (Some references print a sqrt(2 pi) prefactor; orthonormality forces
// sqrt(2), which is what every quadrature identity here relies on.)
double sine_basis(int k, double xi);

}  // namespace bvc
