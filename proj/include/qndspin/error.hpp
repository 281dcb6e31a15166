#pragma once

#include <stdexcept>
#include <string>

namespace qndspin {

// Base of everything the library throws. The CLI maps the subclasses onto
// exit codes: ConfigError -> 2, DataError -> 3, NumericalError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An argument violates an operation's precondition (negative atom number,
// non-PSD covariance, non-orthogonal rotation, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or insufficient data: schema mismatches, too few samples.
class DataError : public Error {
public:
    using Error::Error;
};

class EstimationError : public DataError {
public:
    using DataError::DataError;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// Least-squares failure. `trace` holds the per-iteration residual history
// or the name of the rank-deficient basis.
class FitError : public NumericalError {
public:
    FitError(const std::string& what, std::string trace = {})
        : NumericalError(what), trace_(std::move(trace)) {}
    const std::string& trace() const noexcept { return trace_; }

private:
    std::string trace_;
};

}  // namespace qndspin
