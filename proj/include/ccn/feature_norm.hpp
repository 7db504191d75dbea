// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "ccn/types.hpp"

namespace ccn {

struct NormConfig {
  bool enabled = true;
  double beta = 0.99999;
  double eps = 0.001;  // floor on the standard deviation

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw UsageError("norm beta must lie in (0,1)");
    if (!(eps > 0.0)) throw UsageError("norm eps must be positive");
  }
};

/// Exponentially weighted running mean and variance of one feature.
template <typename Scalar>
struct RunningMoments {
  Scalar mean{0.0};
  Scalar var{1.0};
  double beta = 0.99999;
  double eps = 0.001;
  bool frozen = false;

  RunningMoments() = default;
  explicit RunningMoments(const NormConfig& cfg) : beta(cfg.beta), eps(cfg.eps) {}

  /// max(eps, sigma): the divisor applied to the centred feature.
  Scalar denominator() const {
    using std::max;
    using std::sqrt;
    return max(Scalar(eps), sqrt(var));
  }

  Scalar normalize(const Scalar& h) const { return (h - mean) / denominator(); }
};

/// Updates the moments with h (unless frozen) and returns the normalized value.
/// The variance update uses the new mean in the first factor and the old mean
/// in the second, then clamps at zero.
template <typename Scalar>
Scalar observe_and_normalize(RunningMoments<Scalar>& m, const Scalar& h) {
  if (!is_finite(h)) throw NumericError("non-finite feature value");
  if (!m.frozen) {
    const Scalar old_mean = m.mean;
    const Scalar b(m.beta);
    const Scalar one_minus_b(1.0 - m.beta);
    m.mean = b * m.mean + one_minus_b * h;
    m.var = b * m.var + one_minus_b * ((m.mean - h) * (old_mean - h));
    if (m.var < Scalar(0.0)) m.var = Scalar(0.0);
  }
  return m.normalize(h);
}

}  // namespace ccn
