#pragma once

#include <stdexcept>
#include <string>

namespace dcm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration, robot description, scenario or log.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization of M + hB failed.
class SingularInertia : public Error {
 public:
  using Error::Error;
};

/// Innovation covariance C Sigma C^T + R not positive definite.
class SingularInnovation : public Error {
 public:
  using Error::Error;
};

class NearSingularJacobian : public Error {
 public:
  using Error::Error;
};

/// Fit objective became non-finite.
class DivergedFit : public Error {
 public:
  using Error::Error;
};

class SimulationDiverged : public Error {
 public:
  using Error::Error;
};

/// An observer replay produced a non-finite estimate.
class ObserverDiverged : public Error {
 public:
  using Error::Error;
};

/// The MPC warm start could not be rolled out through the model.
class InfeasibleWarmStart : public Error {
 public:
  using Error::Error;
};

/// The MPC could not produce a solution after resetting its warm start.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace dcm
