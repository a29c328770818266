#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace bvc {

// Monte Carlo estimate with its standard error and provenance.
struct McEstimate {
    double value = 0.0;
    double std_err = 0.0;
    uint64_t n_samples = 0;
    uint64_t seed = 0;
    std::map<std::string, std::string> meta;
};

}  // namespace bvc
