#pragma once

#include <stdexcept>
#include <string>

namespace xcnn {

// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A hyperparameter or argument is outside its legal range.
class ParameterError : public Error {
public:
    using Error::Error;
};

// An object was used out of order (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

// Labels, splits or records are malformed.
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A file exists but is not in the expected format.
class FormatError : public Error {
public:
    using Error::Error;
};

// Loss or activations became non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

// A checkpoint does not belong to the requested architecture.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

} // namespace xcnn
