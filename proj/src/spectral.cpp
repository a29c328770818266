#include <bvcalc/spectral.hpp>

#include <bvcalc/errors.hpp>

#include <cmath>

namespace bvc {

SpectralSpace SpectralSpace::from_eigenvalues(std::vector<double> lambdas) {
    if (lambdas.empty()) throw ArgumentError("eigenvalue list must be nonempty");
    SpectralSpace s;
    s.dim = (int)lambdas.size();
    for (double l : lambdas) {
        if (!(l > 0.0) || !std::isfinite(l))
            throw ArgumentError("eigenvalues must be positive and finite");
        s.r_diag.push_back(std::sqrt(l));
    }
    s.eigenvalues = std::move(lambdas);
    return s;
}

SpectralSpace SpectralSpace::dirichlet_half_inverse(int n) {
    if (n < 1) throw ArgumentError("dimension must be positive");
    std::vector<double> l((size_t)n);
    for (int k = 1; k <= n; ++k) l[(size_t)(k - 1)] = 1.0 / (2.0 * k * k * M_PI * M_PI);
    return from_eigenvalues(std::move(l));
}

SpectralSpace SpectralSpace::paper_lambda(int n) {
    if (n < 1) throw ArgumentError("dimension must be positive");
    std::vector<double> l((size_t)n);
    for (int k = 1; k <= n; ++k) l[(size_t)(k - 1)] = 1.0 / (k * M_PI * k * M_PI);
    return from_eigenvalues(std::move(l));
}

SpectralSpace SpectralSpace::geometric(int n, double rho) {
    if (n < 1) throw ArgumentError("dimension must be positive");
    if (!(rho > 0.0)) throw ArgumentError("geometric ratio must be positive");
    std::vector<double> l((size_t)n);
    double v = 1.0;
    for (int k = 0; k < n; ++k, v *= rho) l[(size_t)k] = v;
    return from_eigenvalues(std::move(l));
}

SpectralSpace SpectralSpace::identity(int n) {
    if (n < 1) throw ArgumentError("dimension must be positive");
    return from_eigenvalues(std::vector<double>((size_t)n, 1.0));
}

double SpectralSpace::r_norm() const {
    double m = 0.0;
    for (double r : r_diag) m = std::max(m, r);
    return m;
}

Point project(const SpectralSpace& space, const Point& x, int n_prime) {
    if (x.dim() != space.dim)
        throw ArgumentError("point dimension does not match the space");
    if (n_prime < 0 || n_prime > space.dim)
        throw ArgumentError("projection rank out of range");
    Point out = x;
    for (int k = n_prime; k < space.dim; ++k) out.coords[(size_t)k] = 0.0;
    return out;
}

double sine_basis(int k, double xi) {
    return std::sqrt(2.0) * std::sin(k * M_PI * xi);
}

}  // namespace bvc
