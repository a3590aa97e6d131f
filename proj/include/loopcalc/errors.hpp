#pragma once

#include <stdexcept>
#include <string>

namespace loopcalc {

// Malformed models, files, or arguments. CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Enumeration or memory budget exceeded. CLI exit code 3.
class BudgetError : public std::runtime_error {
 public:
  explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical degeneracy: zero normalizers, boundary beliefs, singular
// Fisher matrices, non-SPD models. CLI exit code 4.
class DegeneracyError : public std::runtime_error {
 public:
  explicit DegeneracyError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace loopcalc
