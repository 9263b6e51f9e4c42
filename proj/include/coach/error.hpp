#pragma once

#include <stdexcept>
#include <string>

namespace coach {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a precondition (mismatched dims, empty candidate list, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Inputs or settings make the requested computation impossible.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class IllegalState : public Error {
 public:
  using Error::Error;
};

// Score or metric requested over an input that does not define it.
class UndefinedValue : public Error {
 public:
  using Error::Error;
};

}  // namespace coach
