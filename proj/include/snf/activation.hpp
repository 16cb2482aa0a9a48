#ifndef SNF_ACTIVATION_HPP
#define SNF_ACTIVATION_HPP

#include <cmath>

#include "snf/scalar.hpp"

namespace snf {

enum class ActivationKind { Tanh };

// Smooth activation with bounded positive derivative. Only tanh is offered;
// the enumeration keeps the door open without promising more.
struct Activation {
  ActivationKind kind = ActivationKind::Tanh;

  // sup |h'|; equals 1 for tanh.
  double derivative_bound() const { return 1.0; }

  template <class Scalar>
  Scalar h(const Scalar& x) const {
    using std::tanh;
    return tanh(x);
  }

  template <class Scalar>
  Scalar h_prime(const Scalar& x) const {
    using std::tanh;
    Scalar t = tanh(x);
    return Scalar(1) - t * t;
  }
};

}  // namespace snf

#endif  // SNF_ACTIVATION_HPP
