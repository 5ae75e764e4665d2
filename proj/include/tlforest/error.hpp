#pragma once

#include <stdexcept>
#include <string>

namespace tlf {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid inputs: bad schemas, malformed specs, violated preconditions.
/// The CLI maps these to the validation exit code.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed external files; the message carries row/column context.
class ParseError : public Error {
public:
    using Error::Error;
};

}  // namespace tlf
