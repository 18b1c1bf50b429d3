#pragma once

#include <stdexcept>
#include <string>

namespace sharp_bridge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (config files, domains, problems).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A point lies outside the domain where an operation requires it inside.
class DomainError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Non-finite evaluations, singular matrices, failed integrations, and
/// other breakdowns of a numerical procedure.
class NumericError : public Error {
public:
    using Error::Error;
};

/// The constant-prefactor regime could not be established: the
/// characteristic does not leave the domain strictly before the
/// truncated horizon, or it leaves tangentially.
class RsrError : public Error {
public:
    using Error::Error;
};

}  // namespace sharp_bridge
