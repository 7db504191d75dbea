// SPDX-License-Identifier: Apache-2.0
//
// Scalar-state LSTM column with exact forward-mode sensitivities of its hidden
// state with respect to its own parameters.
//
// Parameters live in one flat vector in the canonical order
//   W_i[0..m), W_f[0..m), W_o[0..m), W_g[0..m), u_i, u_f, u_o, u_g, b_i, b_f, b_o, b_g
// so trace arrays, eligibility traces and optimizer state line up by index.
#pragma once

#include <string>

#include "ccn/types.hpp"

namespace ccn {

enum Gate : int { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

inline constexpr Index column_param_count(Index inputs) { return 4 * inputs + 8; }

/// Position of W_gate[j] in the canonical ordering.
inline constexpr Index weight_index(Gate gate, Index j, Index inputs) { return gate * inputs + j; }
inline constexpr Index recurrent_index(Gate gate, Index inputs) { return 4 * inputs + gate; }
inline constexpr Index bias_index(Gate gate, Index inputs) { return 4 * inputs + 4 + gate; }

template <typename Scalar>
struct ColumnParams {
  Vec<Scalar> theta;

  ColumnParams() = default;
  explicit ColumnParams(Index inputs) : theta(Vec<Scalar>::Zero(column_param_count(inputs))) {
    if (inputs < 1) throw UsageError("column needs at least one input");
  }

  Index inputs() const { return (theta.size() - 8) / 4; }

  /// 4 x m input weights, one row per gate.
  Eigen::Map<RowMat<Scalar>> weights() { return {theta.data(), 4, inputs()}; }
  Eigen::Map<const RowMat<Scalar>> weights() const { return {theta.data(), 4, inputs()}; }
  auto recurrent() { return theta.template segment<4>(4 * inputs()); }
  auto recurrent() const { return theta.template segment<4>(4 * inputs()); }
  auto bias() { return theta.template segment<4>(4 * inputs() + 4); }
  auto bias() const { return theta.template segment<4>(4 * inputs() + 4); }
};

/// Output of one forward pass. Gates are cached for the trace update.
template <typename Scalar>
struct CellState {
  Scalar h{0.0};
  Scalar c{0.0};
  Vec4<Scalar> gates = Vec4<Scalar>::Zero();  // i, f, o, g

  Scalar gate(Gate g) const { return gates[g]; }
};

/// TH = dh/dp and TC = dc/dp for every parameter p of one column.
template <typename Scalar>
struct TraceState {
  Vec<Scalar> th;
  Vec<Scalar> tc;

  TraceState() = default;
  explicit TraceState(Index inputs)
      : th(Vec<Scalar>::Zero(column_param_count(inputs))),
        tc(Vec<Scalar>::Zero(column_param_count(inputs))) {}

  Index size() const { return th.size(); }
  void clear() {
    th.setZero();
    tc.setZero();
  }
};

template <typename Scalar, typename Derived>
CellState<Scalar> forward(const ColumnParams<Scalar>& params, const CellState<Scalar>& prev,
                          const Eigen::MatrixBase<Derived>& x) {
  using std::tanh;
  if (x.size() != params.inputs())
    throw UsageError("column input width " + std::to_string(x.size()) + ", expected " +
                     std::to_string(params.inputs()));
  if (!all_finite(x) || !is_finite(prev.h) || !is_finite(prev.c))
    throw NumericError("non-finite column input");

  const Vec4<Scalar> pre = params.weights() * x + params.recurrent() * prev.h + params.bias();

  CellState<Scalar> next;
  next.gates[kInputGate] = sigmoid(pre[kInputGate]);
  next.gates[kForgetGate] = sigmoid(pre[kForgetGate]);
  next.gates[kOutputGate] = sigmoid(pre[kOutputGate]);
  next.gates[kCandidate] = tanh(pre[kCandidate]);
  next.c = next.gates[kForgetGate] * prev.c + next.gates[kInputGate] * next.gates[kCandidate];
  next.h = next.gates[kOutputGate] * tanh(next.c);
  return next;
}

/// Advances `traces` from t-1 to t in place. `prev` is the state at t-1 and
/// `next` the result of forward() on the same inputs.
///
/// Every gate partial has the form act'(gate) * (direct + u_gate * TH(t-1)),
/// where the direct term is x_j, h(t-1) or 1 for the gate's own input weight,
/// recurrent weight or bias. The per-gate products are hoisted so the bulk of
/// the update is two fused passes over the trace arrays.
template <typename Scalar, typename Derived>
void update_traces(const ColumnParams<Scalar>& params, const CellState<Scalar>& prev,
                   const CellState<Scalar>& next, const Eigen::MatrixBase<Derived>& x,
                   TraceState<Scalar>& traces) {
  using std::tanh;
  const Index m = params.inputs();
  if (traces.th.size() != column_param_count(m) || traces.tc.size() != column_param_count(m))
    throw UsageError("trace length does not match column parameter count");
  if (x.size() != m) throw UsageError("trace update input width mismatch");

  const Scalar one(1.0);
  const Scalar i = next.gates[kInputGate];
  const Scalar f = next.gates[kForgetGate];
  const Scalar o = next.gates[kOutputGate];
  const Scalar g = next.gates[kCandidate];

  const Scalar di = i * (one - i);
  const Scalar df = f * (one - f);
  const Scalar dout = o * (one - o);
  const Scalar dg = one - g * g;

  const auto u = params.recurrent();
  const Scalar phc = tanh(next.c);
  const Scalar k_cell = o * (one - phc * phc);

  // Coefficients on TH(t-1) in the TC and TH recursions.
  const Scalar tc_from_th = prev.c * (df * u[kForgetGate]) + i * (dg * u[kCandidate]) + g * (di * u[kInputGate]);
  const Scalar th_from_th = phc * (dout * u[kOutputGate]);

  // Direct-term coefficients: i, f, g reach TC; o reaches TH.
  const Scalar di_c = g * di;
  const Scalar df_c = prev.c * df;
  const Scalar dg_c = i * dg;
  const Scalar do_h = phc * dout;

  traces.tc = f * traces.tc + tc_from_th * traces.th;
  traces.tc.segment(weight_index(kInputGate, 0, m), m) += di_c * x;
  traces.tc.segment(weight_index(kForgetGate, 0, m), m) += df_c * x;
  traces.tc.segment(weight_index(kCandidate, 0, m), m) += dg_c * x;
  traces.tc[recurrent_index(kInputGate, m)] += di_c * prev.h;
  traces.tc[recurrent_index(kForgetGate, m)] += df_c * prev.h;
  traces.tc[recurrent_index(kCandidate, m)] += dg_c * prev.h;
  traces.tc[bias_index(kInputGate, m)] += di_c;
  traces.tc[bias_index(kForgetGate, m)] += df_c;
  traces.tc[bias_index(kCandidate, m)] += dg_c;

  traces.th = k_cell * traces.tc + th_from_th * traces.th;
  traces.th.segment(weight_index(kOutputGate, 0, m), m) += do_h * x;
  traces.th[recurrent_index(kOutputGate, m)] += do_h * prev.h;
  traces.th[bias_index(kOutputGate, m)] += do_h;
}

template <typename Scalar, typename Derived>
TraceState<Scalar> update_traces(const ColumnParams<Scalar>& params, const CellState<Scalar>& prev,
                                 const TraceState<Scalar>& prev_traces, const CellState<Scalar>& next,
                                 const Eigen::MatrixBase<Derived>& x) {
  TraceState<Scalar> out = prev_traces;
  update_traces(params, prev, next, x, out);
  return out;
}

/// A column bundles parameters, the running cell state and its traces.
template <typename Scalar>
struct Column {
  ColumnParams<Scalar> params;
  CellState<Scalar> state;
  TraceState<Scalar> traces;

  Column() = default;
  explicit Column(Index inputs) : params(inputs), traces(inputs) {}

  Index inputs() const { return params.inputs(); }
  Index param_count() const { return params.theta.size(); }

  /// Forward only; used by frozen columns.
  template <typename Derived>
  void advance(const Eigen::MatrixBase<Derived>& x) {
    state = forward(params, state, x);
  }

  /// Forward plus trace update.
  template <typename Derived>
  void advance_and_trace(const Eigen::MatrixBase<Derived>& x) {
    CellState<Scalar> next = forward(params, state, x);
    update_traces(params, state, next, x, traces);
    state = next;
  }

  void reset() {
    state = CellState<Scalar>{};
    if (traces.size() > 0) traces.clear();
  }
};

}  // namespace ccn
