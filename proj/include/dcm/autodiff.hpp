#pragma once

// Forward-mode derivative engine. Every model function in this library is a
// template over its scalar type; instantiating it with Dual propagates kBatchWidth
// directional derivatives alongside the value. Full Jacobians are assembled in
// ceil(m / kBatchWidth) passes.

#include <ceres/jet.h>

#include <algorithm>
#include <vector>

#include "dcm/types.hpp"

namespace dcm {

inline constexpr int kBatchWidth = 8;
using Dual = ceres::Jet<double, kBatchWidth>;

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.a; }

template <class Derived>
Eigen::VectorXd values_of(const Eigen::MatrixBase<Derived>& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = value_of(v(i));
  return out;
}

struct FunctionLinearization {
  Eigen::VectorXd value;
  Eigen::MatrixXd jacobian;  // rows: outputs, cols: inputs
};

/// Value and Jacobian of `f` at `x`. `f` must be callable with both
/// `const VecX<double>&` and `const VecX<Dual>&` and return a vector of the
/// same scalar type.
template <class F>
FunctionLinearization linearize_function(F&& f, const Eigen::VectorXd& x) {
  FunctionLinearization out;
  out.value = f(x);
  const Eigen::Index m = x.size();
  out.jacobian.resize(out.value.size(), m);
  VecX<Dual> xd(m);
  for (Eigen::Index start = 0; start < m; start += kBatchWidth) {
    const Eigen::Index width = std::min<Eigen::Index>(kBatchWidth, m - start);
    for (Eigen::Index i = 0; i < m; ++i) xd(i) = Dual(x(i));
    for (Eigen::Index j = 0; j < width; ++j) xd(start + j).v[j] = 1.0;
    const VecX<Dual> y = f(xd);
    for (Eigen::Index r = 0; r < y.size(); ++r)
      for (Eigen::Index j = 0; j < width; ++j) out.jacobian(r, start + j) = y(r).v[j];
  }
  return out;
}

}  // namespace dcm
