#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dynmal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed external input (trace records, JSON documents, vocabulary files).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Shape or dimensionality disagreement between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Persisted artifact that cannot be trusted (version or checksum mismatch).
class ArchiveError : public Error {
public:
    using Error::Error;
};

}  // namespace dynmal
