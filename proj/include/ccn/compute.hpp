// SPDX-License-Identifier: Apache-2.0
//
// Closed-form per-step operation estimates and the instrumented measurement
// that checks them.
#pragma once

#include <cstdint>
#include <vector>

#include "ccn/counted.hpp"
#include "ccn/types.hpp"

namespace ccn {

struct ComputeShape {
  Topology topology = Topology::Ccn;
  std::int64_t features = 16;     // |h|: total hidden features
  std::int64_t inputs = 12;       // |x|: observation width
  std::int64_t per_stage = 4;     // u (CCN); forced to 1 for Constructive
  std::int64_t truncation = 15;   // k (T-BPTT)
};

/// (k+1)(4d^2 + 4dm + 4d)
inline std::int64_t tbptt_ops(std::int64_t k, std::int64_t d, std::int64_t m) {
  if (k < 1 || d < 1 || m < 1) throw UsageError("T-BPTT cost needs k, d, m >= 1");
  return (k + 1) * (4 * d * d + 4 * d * m + 4 * d);
}

/// 7 d (4m + 8): forward pass plus six trace operations per parameter.
inline std::int64_t columnar_ops(std::int64_t d, std::int64_t m) {
  if (d < 1 || m < 1) throw UsageError("columnar cost needs d, m >= 1");
  return 7 * d * (4 * m + 8);
}

/// d(2d + 4m + 4) + 6u(2d + 4m + 4)
inline std::int64_t ccn_ops(std::int64_t d, std::int64_t u, std::int64_t m) {
  if (d < 1 || u < 1 || m < 1) throw UsageError("CCN cost needs d, u, m >= 1");
  const std::int64_t per_feature = 2 * d + 4 * m + 4;
  return d * per_feature + 6 * u * per_feature;
}

std::int64_t estimate_ops(const ComputeShape& shape);

struct BudgetPair {
  std::int64_t truncation;
  std::int64_t hidden;
  std::int64_t ops;
};

/// For each truncation length 1..max_truncation, the widest dense LSTM whose
/// estimated cost stays within budget * (1 + tolerance).
std::vector<BudgetPair> budget_pairs(std::int64_t budget_ops, std::int64_t inputs,
                                     double tolerance = 0.1, std::int64_t max_truncation = 30);

struct MeasuredOps {
  double total = 0.0;     // mean arithmetic operations per step
  double forward = 0.0;   // forward pass, normalization and readout
  double learning = 0.0;  // traces / truncated backward pass and gradient assembly
  double transcendental = 0.0;
};

struct MeasureOptions {
  std::int64_t steps = 1000;
  bool normalize = true;  // staged networks only; the dense net runs unnormalized
  std::uint64_t seed = 0;
  int stage = -1;  // staged networks: stage to measure at, -1 for the last
};

/// Runs the network described by `shape` with the counting scalar and reports
/// mean operations per step. Staged networks are grown to `opts.stage` first.
/// Only the network step is counted (forward, traces, gradient readout).
MeasuredOps measure_ops(const ComputeShape& shape, const MeasureOptions& opts = {});

}  // namespace ccn
