// SPDX-License-Identifier: Apache-2.0
//
// Ground-truth gradients for verification: full-history reverse-mode BPTT
// and central finite differences. Written as plain loops with no code shared
// with the forward-mode path. Slow on purpose; never used for training.
#pragma once

#include <functional>
#include <vector>

#include "ccn/dense_lstm.hpp"
#include "ccn/recurrent_net.hpp"
#include "ccn/types.hpp"

namespace ccn::oracle {

struct SnapshotColumn {
  int stage = 0;
  bool frozen = false;
  Index inputs = 0;
  std::vector<double> theta;  // canonical column order
  double h0 = 0.0;
  double c0 = 0.0;
  double mean0 = 0.0;
  double var0 = 1.0;
  double out_weight = 0.0;
  Index offset = 0;
};

/// Everything needed to replay a staged network from a given state.
struct NetSnapshot {
  Index input_width = 0;
  bool normalize = false;
  double beta = 0.99999;
  double eps = 0.001;
  Index param_count = 0;
  std::vector<SnapshotColumn> columns;

  bool learnable(Index p) const;
};

NetSnapshot snapshot(const RecurrentNet<double>& net);

using Stream = std::vector<VectorXd>;

/// Exact dy_t/dtheta by reverse accumulation over stream[0..t]. Normalizer
/// statistics are treated as constants; frozen column parameters get 0.
VectorXd bptt_full(const NetSnapshot& net, const Stream& stream, std::size_t t);

/// Predictions y_0..y_t from replaying the snapshot.
std::vector<double> predictions(const NetSnapshot& net, const Stream& stream, std::size_t t);

/// Central differences of y_t. The normalizer statistics are pinned to the
/// trajectory of the unperturbed run, matching the stop-statistics gradient.
VectorXd finite_diff(const NetSnapshot& net, const Stream& stream, std::size_t t, double delta);

/// Exact dy_t/dtheta of a dense LSTM with fixed parameters over the full
/// history (unnormalized readout y = w . h).
VectorXd dense_bptt_full(const DenseLstmParams<double>& params, const Stream& stream, std::size_t t);
double dense_prediction(const DenseLstmParams<double>& params, const Stream& stream, std::size_t t);
/// Central differences of the dense prediction, replayed in extended precision.
VectorXd dense_finite_diff(const DenseLstmParams<double>& params, const Stream& stream, std::size_t t, double delta);

/// Central differences of an arbitrary scalar function; entries with
/// mask[p] == false are left at zero.
VectorXd finite_diff(const std::function<double(const VectorXd&)>& f, const VectorXd& theta, double delta,
                     const std::vector<bool>& mask = {});

/// Outcome of comparing the engine's online gradients with both oracles.
struct GradientCheck {
  Topology topology = Topology::Columnar;
  int instances = 0;
  double max_abs_bptt = 0.0;  // engine vs reverse-mode oracle, every step
  double max_rel_fd = 0.0;    // finite differences vs reverse mode, sampled steps
  double max_abs_fd = 0.0;
};

/// Random instances of the shapes used for acceptance: columnar 5 columns on
/// 5 inputs; CCN 2 stages x 2 features; constructive 3 stages x 1 feature;
/// T-BPTT width 3 with truncation longer than the stream. Staged instances run
/// a few steps per stage before freezing so frozen features carry real state.
GradientCheck verify_gradients(Topology topology, int instances, std::size_t steps, std::uint64_t seed,
                               double fd_delta = 1e-6, double fd_floor = 1e-8);

}  // namespace ccn::oracle
