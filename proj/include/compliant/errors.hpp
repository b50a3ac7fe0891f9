#pragma once

#include <stdexcept>
#include <string>

namespace compliant {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by caller-supplied data (bad extents, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Mesh file or connectivity problem.
class MeshError : public Error {
 public:
  using Error::Error;
};

class ElementInversion : public Error {
 public:
  ElementInversion(int tet, double volume)
      : Error("element inversion: tet " + std::to_string(tet) +
              " has current volume " + std::to_string(volume)),
        tet_(tet) {}
  int tet() const { return tet_; }

 private:
  int tet_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : Error(what + " (last residual " + std::to_string(last_residual) + ")"),
        last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// Constraint whose Jacobian row vanishes or whose geometry is degenerate.
class DegenerateConstraint : public Error {
 public:
  using Error::Error;
};

/// Matrix too close to singular for the requested operation.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

/// The QP feasible set is empty. `violation` is the smallest achievable
/// maximum constraint violation found by the phase-one problem.
class QPInfeasible : public Error {
 public:
  QPInfeasible(const std::string& what, double violation)
      : Error(what), violation_(violation) {}
  double violation() const { return violation_; }

 private:
  double violation_;
};

class QPNumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace compliant
