#pragma once

#include <stdexcept>
#include <string>

namespace s2i {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible for an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameter or architectural configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Batch too small for batch statistics or in-batch contrastive terms.
class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

// Second-order gradient requested through an op whose backward is not taped.
class UnsupportedOpError : public Error {
public:
    using Error::Error;
};

// Numerical failure (non-finite values, eigensolver breakdown).
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed or missing files on disk.
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace s2i
