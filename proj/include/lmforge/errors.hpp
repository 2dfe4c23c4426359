#pragma once

#include <stdexcept>
#include <string>

namespace lmforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller misuse: bad arguments, violated preconditions, bad CLI flags.
class UsageError : public Error {
public:
    using Error::Error;
};

// Tensor shape mismatches.
class DimensionError : public UsageError {
public:
    using UsageError::UsageError;
};

// File system problems (unreadable, missing, short writes).
class IoError : public Error {
public:
    using Error::Error;
};

// Invalid byte sequences in input text.
class EncodingError : public IoError {
public:
    EncodingError(const std::string& what, size_t byte_offset)
        : IoError(what), byte_offset_(byte_offset) {}
    size_t byte_offset() const { return byte_offset_; }

private:
    size_t byte_offset_ = 0;
};

// Malformed structured input (TSV rows, manifests).
class ParseError : public Error {
public:
    ParseError(const std::string& what, size_t line)
        : Error(what), line_(line) {}
    size_t line() const { return line_; }

private:
    size_t line_ = 0;
};

// Well-formed input carrying out-of-contract values.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Checkpoint contents do not match their manifest.
class CorruptionError : public Error {
public:
    using Error::Error;
};

// A metric cannot be computed on the given data.
class EvaluationError : public Error {
public:
    using Error::Error;
};

}  // namespace lmforge
