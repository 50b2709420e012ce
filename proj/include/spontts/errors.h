#ifndef SPONTTS_ERRORS_H_
#define SPONTTS_ERRORS_H_

#include <stdexcept>
#include <string>

namespace spontts {

// Malformed input, broken invariant or bad configuration (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or value during computation (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spontts

#endif  // SPONTTS_ERRORS_H_
