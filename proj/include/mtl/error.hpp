#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

// Common base so the CLI can map any toolkit failure to a nonzero exit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Sink/source failures while reading or writing files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncation, unparsable rows).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (sigma <= 0, kpi outside (0,1), ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Mismatched shapes, lengths or counts.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Hard guards against combinatorial blow-up (task count, queue misuse).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Crop sampling cannot satisfy its constraints.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// No candidate tree fits the resource budget; carries the cheapest resource
// seen so callers can report how far off the budget was.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& msg, double cheapest)
      : Error(msg), cheapest_resource(cheapest) {}
  double cheapest_resource;
};

}  // namespace mtl
