// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ccn {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

using VectorXd = Vec<double>;

/// Caller violated a shape or configuration contract.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value appeared where the math requires finite numbers.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Topology { Columnar, Constructive, Ccn, Tbptt };

std::string to_string(Topology t);
Topology parse_topology(const std::string& s);

template <typename Scalar>
inline Scalar sigmoid(const Scalar& z) {
  using std::exp;
  return Scalar(1) / (Scalar(1) + exp(-z));
}

inline bool is_finite(double v) { return std::isfinite(v); }
inline double to_double(double v) { return v; }

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& v) {
  for (Index i = 0; i < v.size(); ++i)
    if (!is_finite(v.derived().coeff(i))) return false;
  return true;
}

}  // namespace ccn
