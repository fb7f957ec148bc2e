#pragma once

#include <stdexcept>
#include <string>

namespace deepis {

// Bad input: parameters, configs, shapes. CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, domain violations, arbitrage in the vol surface,
// divergent training. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

} // namespace detail
} // namespace deepis
