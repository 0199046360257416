#pragma once

#include <stdexcept>
#include <string>

namespace curvecal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values or ranges.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller misuse: empty inputs, wrong sizes, unknown names.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A no-load capture saw applied force.
class ContaminationError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a dataset rule (e.g. curvature above the training limit).
class DataRejectedError : public Error {
 public:
  using Error::Error;
};

/// Least-squares design matrix is rank deficient.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Session stream ordering or framing violation.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable artifact file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace curvecal
