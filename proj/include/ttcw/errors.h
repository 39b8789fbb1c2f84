#pragma once

#include <stdexcept>
#include <string>

namespace ttcw {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Input data failed schema or invariant checks. The message names the
/// offending record (file:line or id).
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// The model produced nothing usable (empty completion, etc).
class GenerationError : public Error {
public:
    using Error::Error;
};

}  // namespace ttcw
