#pragma once

#include <stdexcept>
#include <string>

namespace diqcd {

// Invalid configuration or malformed input. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or a numerical tolerance blown at runtime. Exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Result rejected because the run left its validity regime
// (e.g. mobility fit outside the diffusive window). Exit code 4.
struct RegimeError : std::runtime_error {
    explicit RegimeError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace diqcd
