#pragma once

#include <stdexcept>
#include <string>

namespace ulrl {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or unknown configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller passed an argument violating a documented precondition.
class InputError : public Error {
public:
    using Error::Error;
};

/// Shape or layer-compatibility contract violation; message names the layer.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite value where finiteness is required (CLI exit code 4).
class NumericError : public Error {
public:
    using Error::Error;
};

/// File I/O failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// A required fixture quality gate was not met (CLI exit code 3).
class GateError : public Error {
public:
    using Error::Error;
};

}  // namespace ulrl
