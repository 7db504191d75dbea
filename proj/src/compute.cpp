// SPDX-License-Identifier: Apache-2.0
#include "ccn/compute.hpp"

#include <random>

#include "ccn/dense_lstm.hpp"
#include "ccn/recurrent_net.hpp"

namespace ccn {
namespace {

template <typename Net>
MeasuredOps count_steps(Net& net, Index inputs, const MeasureOptions& opts, std::int64_t warmup) {
  std::mt19937_64 rng(opts.seed ^ 0x5eedu);
  std::bernoulli_distribution bit(0.5);
  Vec<CountedReal> x(inputs);
  auto draw = [&] {
    for (Index j = 0; j < inputs; ++j) x[j] = CountedReal(bit(rng) ? 1.0 : 0.0);
  };
  for (std::int64_t t = 0; t < warmup; ++t) {
    draw();
    net.step(x);
  }
  reset_op_tally();
  for (std::int64_t t = 0; t < opts.steps; ++t) {
    draw();
    net.step(x);
  }
  const OpTally tally = op_tally();
  reset_op_tally();
  const double n = static_cast<double>(opts.steps);
  MeasuredOps out;
  out.forward = static_cast<double>(tally.arithmetic[static_cast<int>(OpPhase::Forward)]) / n;
  out.learning = static_cast<double>(tally.arithmetic[static_cast<int>(OpPhase::Learning)]) / n;
  out.total = static_cast<double>(tally.total()) / n;
  std::uint64_t transc = 0;
  for (auto c : tally.transcendental) transc += c;
  out.transcendental = static_cast<double>(transc) / n;
  return out;
}

}  // namespace

std::int64_t estimate_ops(const ComputeShape& s) {
  switch (s.topology) {
    case Topology::Tbptt: return tbptt_ops(s.truncation, s.features, s.inputs);
    case Topology::Columnar: return columnar_ops(s.features, s.inputs);
    case Topology::Ccn: return ccn_ops(s.features, s.per_stage, s.inputs);
    case Topology::Constructive: return ccn_ops(s.features, 1, s.inputs);
  }
  throw UsageError("unknown topology");
}

std::vector<BudgetPair> budget_pairs(std::int64_t budget_ops, std::int64_t inputs, double tolerance,
                                     std::int64_t max_truncation) {
  if (budget_ops <= 0) throw UsageError("budget must be positive");
  if (inputs < 1) throw UsageError("input width must be >= 1");
  if (tolerance < 0.0) throw UsageError("tolerance must be non-negative");
  const double limit = static_cast<double>(budget_ops) * (1.0 + tolerance);
  std::vector<BudgetPair> out;
  for (std::int64_t k = 1; k <= max_truncation; ++k) {
    std::int64_t d = 0;
    while (static_cast<double>(tbptt_ops(k, d + 1, inputs)) <= limit) ++d;
    if (d >= 1) out.push_back({k, d, tbptt_ops(k, d, inputs)});
  }
  return out;
}

MeasuredOps measure_ops(const ComputeShape& shape, const MeasureOptions& opts) {
  if (opts.steps < 1) throw UsageError("measurement needs at least one step");
  if (shape.features < 1 || shape.inputs < 1) throw UsageError("features and inputs must be >= 1");
  const Index m = static_cast<Index>(shape.inputs);

  if (shape.topology == Topology::Tbptt) {
    DenseConfig cfg;
    cfg.input_width = m;
    cfg.hidden = static_cast<Index>(shape.features);
    cfg.truncation = shape.truncation;
    cfg.seed = opts.seed;
    DenseNet<CountedReal> net(cfg);
    return count_steps(net, m, opts, shape.truncation);
  }

  NetConfig cfg;
  cfg.topology = shape.topology;
  cfg.input_width = m;
  cfg.seed = opts.seed;
  cfg.norm.enabled = opts.normalize;
  if (shape.topology == Topology::Columnar) {
    cfg.stages = {static_cast<int>(shape.features), 1, 1};
  } else {
    const std::int64_t u = shape.topology == Topology::Constructive ? 1 : shape.per_stage;
    if (u < 1 || shape.features % u != 0) throw UsageError("features must be a multiple of features per stage");
    cfg.stages = {static_cast<int>(u), 1, static_cast<int>(shape.features / u)};
  }
  RecurrentNet<CountedReal> net(cfg);
  const int target = opts.stage < 0 ? cfg.stages.total_stages - 1 : opts.stage;
  if (target >= cfg.stages.total_stages) throw UsageError("stage out of range");
  while (net.current_stage() < target) net.advance_stage();
  return count_steps(net, m, opts, 10);
}

}  // namespace ccn
