#pragma once

#include <stdexcept>
#include <string>

namespace contravirt {

/// Base of every error the library throws. The CLI maps subclasses onto
/// process exit codes (1 config, 2 data, 3 numerical).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, usage, or violated API contract.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Problems with input data: unreadable files, bad schema, placement failures.
class DataError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public DataError {
 public:
  using DataError::DataError;
};

/// Singular systems, non-finite losses, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace contravirt
