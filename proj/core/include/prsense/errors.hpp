#pragma once

#include <stdexcept>
#include <string>

namespace prsense {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Expression evaluated outside its domain (log of a nonpositive value,
/// fractional power of a negative base, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A parameter id is outside the instantiation's range.
class MissingParameter : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid expression input (bad JSON shape, unknown operator,
/// non-representable constant).
class MalformedExpr : public Error {
 public:
  using Error::Error;
};

/// Model fails a structural invariant (shape mismatch, bad distribution, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An instantiation makes a transition probability vanish, leave (0,1], or
/// breaks a row sum.
class GraphPreservationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// An instantiated uncertainty polytope contains no distribution.
class EmptyUncertaintySet : public Error {
 public:
  EmptyUncertaintySet(int state, const std::string& what)
      : Error(what), state_(state) {}
  int state() const { return state_; }

 private:
  int state_;
};

/// Direct solver met a vanishing pivot / rank deficiency. For the derivative
/// systems this is the signal that the derivative is undefined.
class SingularMatrix : public Error {
 public:
  using Error::Error;
};

/// A gradient was requested at an instantiation where the robust solution
/// function is not differentiable.
class NotDifferentiable : public Error {
 public:
  using Error::Error;
};

/// Iteration failed to converge or a numeric consistency check was violated.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace prsense
