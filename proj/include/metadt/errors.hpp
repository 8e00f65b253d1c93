#ifndef METADT_ERRORS_HPP
#define METADT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace metadt {

// Base for all library errors. Subclasses map to CLI exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension or layout mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Index or label outside its valid range.
class IndexError : public Error {
public:
    using Error::Error;
};

// Misuse of a GradTape (e.g. backward on a node the tape does not own).
class TapeError : public Error {
public:
    using Error::Error;
};

// Zero-norm vector or otherwise degenerate numeric input.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Structural validation failure (hierarchy invariants, dataset integrity).
class ValidationError : public Error {
public:
    ValidationError(const std::string& kind, const std::string& msg)
        : Error(kind + ": " + msg), kind_(kind) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Not enough classes or samples to satisfy a sampling request.
class CapacityError : public Error {
public:
    using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or parameter encountered during optimization.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, long step) : Error(msg), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Non-finite values produced where finiteness is guaranteed.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Operation called outside its contract (leaf where non-leaf required, etc).
class ContractError : public Error {
public:
    using Error::Error;
};

}  // namespace metadt

#endif
