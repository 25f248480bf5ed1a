#pragma once

#include <stdexcept>
#include <string>

namespace diffscale {

/// Invalid construction parameters or run configuration.
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A condition referencing labels that do not exist, or selecting nothing.
class condition_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// API contract violation (dimension mismatch, missing required field).
class contract_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Numerical failure inside an iterative pipeline; carries the step index.
class numeric_error : public std::runtime_error {
public:
    numeric_error(const std::string& what, int step)
        : std::runtime_error(what + " at step t=" + std::to_string(step)), step_(step) {}

    int step() const noexcept { return step_; }

private:
    int step_;
};

}  // namespace diffscale
