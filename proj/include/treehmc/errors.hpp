#ifndef TREEHMC_ERRORS_HPP
#define TREEHMC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace treehmc {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Illegal grow/prune edit or unknown node id.
class StructuralEditError : public Error {
 public:
  explicit StructuralEditError(const std::string& what) : Error(what) {}
};

// Value outside the domain of a constraint map.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

// Malformed CSV / dataset input; message carries the location.
class IngestError : public Error {
 public:
  explicit IngestError(const std::string& what) : Error(what) {}
};

// Inconsistent or unusable run configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace treehmc

#endif  // TREEHMC_ERRORS_HPP
