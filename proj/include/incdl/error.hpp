#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace incdl {

/// Precondition violation by the caller (dimension mismatch, bad argument).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration (config file, CLI flags, model knobs).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed matrix / dataset / config text.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Power iteration ran out of iterations. Carries the last iterate so the
/// caller can decide whether it is usable.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> last_iterate,
                     double residual, std::size_t iterations)
        : std::runtime_error(what),
          last_iterate_(std::move(last_iterate)),
          residual_(residual),
          iterations_(iterations) {}

    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    std::vector<double> last_iterate_;
    double residual_;
    std::size_t iterations_;
};

namespace detail {

inline void require(bool condition, const char* message) {
    if (!condition) throw ArgumentError(message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ArgumentError(message);
}

}  // namespace detail
}  // namespace incdl
