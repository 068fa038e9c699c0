#ifndef RNASCL_ERROR_HPP
#define RNASCL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace rnascl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, wrong rank, or an out-of-range axis.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value outside an operation's domain (log of a non-positive number, tau <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable file; the message carries the byte offset when known.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid or unknown configuration key / value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline command was invoked before the phase it depends on completed.
class PhaseOrderError : public Error {
public:
    using Error::Error;
};

/// A file referenced by a run manifest does not exist.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace rnascl

#endif  // RNASCL_ERROR_HPP
