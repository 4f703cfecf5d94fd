#pragma once

#include <stdexcept>
#include <string>

namespace teamalign {

// Error taxonomy shared by the whole library. The CLI maps kinds to exit
// codes (input/validation -> 1, numerical non-convergence -> 2).
enum class ErrorKind {
  Dimension,     // shape mismatch between inputs
  Validation,    // invariant of a type or problem failed
  Infeasible,    // empty feasible set / constraint violated
  Convergence,   // iteration budget exhausted or stagnation
  Precondition,  // operation called outside its contract
  Io,            // file / schema problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error dimension_error(const std::string& what) {
  return Error(ErrorKind::Dimension, what);
}
inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::Validation, what);
}
inline Error infeasible_error(const std::string& what) {
  return Error(ErrorKind::Infeasible, what);
}
inline Error convergence_error(const std::string& what) {
  return Error(ErrorKind::Convergence, what);
}
inline Error precondition_error(const std::string& what) {
  return Error(ErrorKind::Precondition, what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorKind::Io, what);
}

}  // namespace teamalign
