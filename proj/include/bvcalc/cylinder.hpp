#pragma once

#include <bvcalc/spectral.hpp>

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace bvc {

// Smooth cylindrical function phi(x) = f(x_{i_1}, ..., x_{i_m}) with an exact
// gradient and an optional Hessian of the core f. Cores act on the packed
// active coordinates; ops below scatter back to full dimension.
class CylFunction {
  public:
    using ValueFn = std::function<double(std::span<const double>)>;
    using GradFn = std::function<void(std::span<const double>, std::span<double>)>;
    // Row-major m x m.
    using HessFn = std::function<void(std::span<const double>, std::span<double>)>;

    CylFunction(std::vector<int> active, ValueFn value, GradFn grad,
                HessFn hess = nullptr,
                std::optional<double> sup_bound = std::nullopt,
                std::optional<double> grad_sup_bound = std::nullopt);

    const std::vector<int>& active_indices() const { return active_; }
    int arity() const { return (int)active_.size(); }
    bool has_hessian() const { return (bool)hess_; }
    std::optional<double> sup_bound() const { return sup_bound_; }
    std::optional<double> grad_sup_bound() const { return grad_sup_bound_; }

    double value(const Point& x) const;
    // Gradient over the active coordinates (out.size() == arity()).
    void gradient_active(const Point& x, std::span<double> out) const;
    // Hessian over the active coordinates (out.size() == arity()^2).
    void hessian_active(const Point& x, std::span<double> out) const;

    // Core access for callers that already hold packed coordinates.
    double value_packed(std::span<const double> u) const { return value_(u); }
    void gradient_packed(std::span<const double> u, std::span<double> out) const {
        grad_(u, out);
    }
    void hessian_packed(std::span<const double> u, std::span<double> out) const;

  private:
    void gather(const Point& x, std::span<double> u) const;

    std::vector<int> active_;
    ValueFn value_;
    GradFn grad_;
    HessFn hess_;
    std::optional<double> sup_bound_;
    std::optional<double> grad_sup_bound_;
};

// Largest supported core arity (packed coordinates live on the stack).
inline constexpr int kMaxCylArity = 64;

// ---- factories --------------------------------------------------------------

CylFunction cyl_constant(double c);
// f(u) = sum w_i u_i + b.
CylFunction cyl_affine(std::vector<int> active, std::vector<double> w, double b);
// One-variable polynomial sum_j coeffs[j] * x_index^j.
CylFunction cyl_poly1(int index, std::vector<double> coeffs);
// tanh(w . u + b); sup bound 1, gradient sup bound |w|.
CylFunction cyl_tanh_affine(std::vector<int> active, std::vector<double> w, double b);
// tanh(scale * |u|^2); sup bound 1.
CylFunction cyl_radial_tanh(std::vector<int> active, double scale);
// exp(-a |u - c|^2); sup bound 1, gradient sup bound sqrt(2a) e^{-1/2}.
CylFunction cyl_gauss_bump(std::vector<int> active, std::vector<double> center,
                           double a);
// Pointwise product; Hessian present when both factors carry one.
CylFunction cyl_multiply(const CylFunction& f, const CylFunction& g);

// ---- pure differential operators -------------------------------------------

// (sqrt(lambda_k) d_k f)_k, zero outside the active set.
std::vector<double> stretched_gradient(const SpectralSpace& space,
                                       const CylFunction& f, const Point& x);
// Plain gradient, zero outside the active set.
std::vector<double> full_gradient(const SpectralSpace& space, const CylFunction& f,
                                  const Point& x);
// Row-major dim x dim matrix sqrt(lambda_h) sqrt(lambda_k) d_h d_k f.
std::vector<double> stretched_hessian(const SpectralSpace& space,
                                      const CylFunction& f, const Point& x);

// ---- generic scalar functionals ---------------------------------------------

// A differentiable scalar functional with a full-dimension gradient; the
// common ground between cylindrical functions and quadrature-backed
// functionals (norms, integral functionals).
struct ScalarFunctional {
    std::function<double(const Point&)> value;
    std::function<std::vector<double>(const Point&)> gradient;
};

ScalarFunctional as_functional(const CylFunction& f, int dim);

// Piecewise-linear cutoff of g at level r with width eps:
// 1 below r - eps, 0 above r, linear in between.
struct SmoothedIndicator {
    double r = 0.0;
    double eps = 1.0;
    ScalarFunctional g;
};

double smoothed_indicator_eval(const SmoothedIndicator& si, const Point& x);
// -(1/eps) 1{r - eps < g(x) < r} grad g(x); the kink set has measure zero
// under every implemented measure.
std::vector<double> smoothed_indicator_gradient(const SmoothedIndicator& si,
                                                const Point& x);

// Finite-rank field F(x) = sum_i f_i(x) z_i.
struct CylField {
    std::vector<std::pair<CylFunction, std::vector<double>>> terms;
};

}  // namespace bvc
