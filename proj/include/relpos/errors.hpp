#pragma once

#include <stdexcept>
#include <string>

namespace relpos {

// Error taxonomy. Each class maps to one CLI exit code (see tools/relpos.cpp).

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of the API (e.g. backward from a non-scalar).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Index outside a table or matrix.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// A sequence needs a position the model has no parameters for.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Invalid task parameters (e.g. sequence shorter than the copy offset).
class TaskError : public Error {
public:
    using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Malformed checkpoint or config file.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace relpos
