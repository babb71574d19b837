#pragma once

#include <functional>

#include "sardet/tensor.hpp"

namespace sardet {

// Central-difference gradient oracle: (f(x+h*e_i) - f(x-h*e_i)) / (2h) per
// element. Independent of the tape; used to audit every recorded backward rule.
template <class Real>
TensorT<Real> finite_diff_grad(const std::function<Real(const TensorT<Real>&)>& f,
                               const TensorT<Real>& x, Real h = Real(1e-3)) {
  require(h > Real(0), "finite_diff_grad: step must be positive, got ", h);
  TensorT<Real> g(x.shape);
  TensorT<Real> probe = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const Real v = x.data[i];
    probe.data[i] = v + h;
    const Real fp = f(probe);
    probe.data[i] = v - h;
    const Real fm = f(probe);
    probe.data[i] = v;
    g.data[i] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace sardet
