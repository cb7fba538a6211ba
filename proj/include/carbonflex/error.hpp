#pragma once

#include <stdexcept>
#include <string>

namespace carbonflex {

/// Malformed input file or configuration. Exit code 2 at the CLI.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the valid domain of an operation (e.g. a scale outside [k_min, k_max]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Index or time window not covered by the data.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Brute-force search asked to enumerate an instance above its size guard.
class RefusalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run could not produce a feasible result (exit code 1 at the CLI).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace carbonflex
