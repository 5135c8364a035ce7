#pragma once

#include <stdexcept>
#include <string>

namespace skipfuse {

/// Base of every error raised by the library. The exit code is what the
/// command-line tool returns when the error escapes a command.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration: bad flags, unknown keys, inconsistent settings.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Invalid or corrupt data: malformed bundles, non-finite inputs.
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Array dimensions that do not line up.
class ShapeError : public DataError {
public:
    using DataError::DataError;
};

/// Arguments outside an operation's domain.
class InputError : public DataError {
public:
    using DataError::DataError;
};

/// A cosine loss was requested over an empty visible set.
class EmptyVisibleSet : public DataError {
public:
    EmptyVisibleSet() : DataError("visible set is empty") {}
};

/// Training produced a non-finite value.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Library misuse that indicates a programming error (e.g. a stale cache).
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace skipfuse
