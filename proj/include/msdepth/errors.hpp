#pragma once

#include <stdexcept>
#include <string>

namespace msdepth {

/// Base of every error raised by the library. The C API maps each subclass to
/// one status code, so new kinds must also be added to `msd_status`.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, inconsistent, or non-rigid camera calibration.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Inputs outside an operation's mathematical domain (empty masks, non-positive depth).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Shape, stage, or plane mismatches between cooperating components.
class InterfaceError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Truncated or tampered archives, digest and provenance mismatches.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// A training contract was broken (frozen backbone modified, non-finite loss).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace msdepth
