#pragma once

#include <stdexcept>
#include <string>

namespace comptrack {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numerical 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape violations are caught before the offending primitive executes.
struct ShapeError : NumericalError {
    explicit ShapeError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace comptrack
