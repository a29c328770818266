#pragma once

#include <stdexcept>
#include <string>

namespace bvc {

// Invalid user-facing configuration (bad config file, bad flag, bad schema).
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument to a library call (out-of-range index, size mismatch).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A computation produced data it refuses to trust (non-finite sample rate
// above threshold, path blow-up). The CLI maps this to exit code 3.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The object lacks an optional capability the operation needs (e.g. Hessian).
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An iterative numeric procedure failed to converge; the message carries the
// residual report.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bvc
