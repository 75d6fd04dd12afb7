#pragma once

#include <stdexcept>
#include <string>

namespace polarlab {

/// Base of every error thrown by the library. The CLI maps subclasses to
/// exit codes (config 2, numerical 3, resource cap 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A point or parameter outside the admissible domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Factorization / eigensolver / estimation failure.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A request that would exceed a configured size cap.
class ResourceError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration. `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error("config error at '" + field + "': " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace polarlab
