#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fours {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes, so new failure kinds should derive from one of these.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row)
        : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class BracketError : public Error {
public:
    using Error::Error;
};

class EmptySampleError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class OutOfRangeError : public DomainError {
public:
    using DomainError::DomainError;
};

}  // namespace fours
