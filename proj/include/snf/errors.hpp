#ifndef SNF_ERRORS_HPP
#define SNF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace snf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size mismatch in a public operation.
struct DimensionError : Error {
  using Error::Error;
};

// An iterative procedure stopped without reaching its threshold.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& msg, double residual_in)
      : Error(msg), residual(residual_in) {}
  double residual;
};

// Spectral-norm precondition of an orthogonalization violated.
struct SpectralNormError : Error {
  SpectralNormError(const std::string& msg, double norm)
      : Error(msg), spectral_norm(norm) {}
  double spectral_norm;
};

// |det J| fell below the working threshold.
struct SingularJacobianError : Error {
  using Error::Error;
};

// Parameters sit outside the invertible region.
struct NonInvertibleError : Error {
  using Error::Error;
};

// A non-finite value escaped a numeric computation; `block` names the
// parameter block when known.
struct NumericalError : Error {
  explicit NumericalError(const std::string& msg, std::string block_in = {})
      : Error(msg), block(std::move(block_in)) {}
  std::string block;
};

struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite objective.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace snf

#endif  // SNF_ERRORS_HPP
