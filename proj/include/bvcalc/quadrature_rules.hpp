#pragma once

#include <vector>

namespace bvc {

struct QuadRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre on (0, 1); weights sum to 1. Cached per order.
const QuadRule& gauss_legendre_01(int order);

// Gauss-Hermite for the standard normal weight; weights sum to 1.
const QuadRule& gauss_hermite_unit(int order);

}  // namespace bvc
