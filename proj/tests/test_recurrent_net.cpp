// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "ccn/compute.hpp"
#include "ccn/grad_oracle.hpp"
#include "ccn/recurrent_net.hpp"
#include "test_util.hpp"

using namespace ccn;

namespace {

NetConfig staged(Topology topo, Index width, int per_stage, std::int64_t sps, int stages, bool norm = true) {
  NetConfig c;
  c.topology = topo;
  c.input_width = width;
  c.stages = {per_stage, sps, stages};
  c.norm.enabled = norm;
  return c;
}

void randomize_heads(RecurrentNet<double>& net, std::mt19937_64& rng) {
  VectorXd p = net.parameters();
  std::normal_distribution<double> n(0.0, 0.5);
  for (const auto& s : net.slots()) p[s.weight_offset()] = n(rng);
  net.set_parameters(p);
}

}  // namespace

TEST_CASE("initial parameters") {
  RecurrentNet<double> net(staged(Topology::Ccn, 12, 4, 100, 3));
  CHECK(net.feature_count() == 4);
  CHECK(net.param_count() == 4 * (4 * 12 + 8 + 1));
  const double bound = 1.0 / std::sqrt(12.0);
  for (const auto& s : net.slots()) {
    const auto& th = s.column.params.theta;
    CHECK(th.head(4 * 12 + 4).cwiseAbs().maxCoeff() <= bound);
    CHECK(th.tail(4).isZero());
    CHECK(s.out_weight == 0.0);
    CHECK(s.moments.mean == 0.0);
    CHECK(s.moments.var == 1.0);
  }
}

TEST_CASE("zero parameters give zero prediction and feature gradients") {
  RecurrentNet<double> net(staged(Topology::Ccn, 3, 2, 100, 2));
  net.set_parameters(VectorXd::Zero(net.param_count()));
  std::mt19937_64 rng(1);
  for (int t = 0; t < 5; ++t) {
    CHECK(net.step(test::normal_vector(rng, 3)) == 0.0);
    for (const auto& s : net.slots()) {
      CHECK(net.gradient().segment(s.offset, s.column.param_count()).isZero());
      CHECK(net.gradient()[s.weight_offset()] == 0.0);
    }
  }
}

TEST_CASE("head gradient is the normalized feature") {
  std::mt19937_64 rng(4);
  RecurrentNet<double> net(staged(Topology::Ccn, 3, 3, 100, 1));
  randomize_heads(net, rng);
  for (int t = 0; t < 20; ++t) {
    const double y = net.step(test::normal_vector(rng, 3));
    double expect = 0.0;
    for (std::size_t j = 0; j < net.slots().size(); ++j) {
      const auto& s = net.slots()[j];
      const double hhat = net.features()[static_cast<Index>(j)];
      CHECK(net.gradient()[s.weight_offset()] == hhat);
      CHECK(hhat == doctest::Approx(s.moments.normalize(s.column.state.h)).epsilon(1e-14));
      expect += s.out_weight * hhat;
    }
    CHECK(y == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("single unnormalized feature with unit head weight") {
  std::mt19937_64 rng(8);
  NetConfig cfg = NetConfig::columnar(4, 1);
  cfg.norm.enabled = false;
  RecurrentNet<double> net(cfg);
  VectorXd p = net.parameters();
  p[p.size() - 1] = 1.0;
  net.set_parameters(p);
  for (int t = 0; t < 30; ++t) {
    const double y = net.step(test::normal_vector(rng, 4));
    const auto& col = net.slots()[0].column;
    CHECK(y == col.state.h);
    CHECK(net.gradient().head(col.param_count()) == col.traces.th);
  }
}

TEST_CASE("gradient scaling by head weight over the normalizer denominator") {
  std::mt19937_64 rng(12);
  RecurrentNet<double> net(staged(Topology::Columnar, 3, 3, 1, 1));
  randomize_heads(net, rng);
  for (int t = 0; t < 25; ++t) {
    net.step(test::normal_vector(rng, 3));
    for (const auto& s : net.slots()) {
      const VectorXd expect = (s.out_weight / s.moments.denominator()) * s.column.traces.th;
      CHECK(test::max_abs_diff(net.gradient().segment(s.offset, s.column.param_count()), expect) <= 1e-15);
    }
  }
}

TEST_CASE("two stages of two features match full-history BPTT") {
  std::mt19937_64 rng(33);
  for (int instance = 0; instance < 3; ++instance) {
    RecurrentNet<double> net(staged(Topology::Ccn, 3, 2, 1000000, 2));
    net.set_parameters(test::normal_vector(rng, net.param_count(), 0.5));
    for (int t = 0; t < 20; ++t) net.step(test::normal_vector(rng, 3));
    REQUIRE(net.advance_stage());
    net.set_parameters(test::normal_vector(rng, net.param_count(), 0.5));
    const auto snap = oracle::snapshot(net);
    const auto stream = test::normal_stream(rng, 100, 3);
    double worst = 0.0;
    for (std::size_t t = 0; t < stream.size(); ++t) {
      net.step(stream[t]);
      worst = std::max(worst, test::max_abs_diff(net.gradient(), oracle::bptt_full(snap, stream, t)));
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("stage schedule reaches four stages of four features") {
  // 10 steps per stage stands in for 2.5e6; the schedule only counts steps.
  RecurrentNet<double> net(staged(Topology::Ccn, 12, 4, 10, 4));
  std::mt19937_64 rng(2);
  int advances = 0;
  for (int t = 0; t < 40; ++t) {
    net.step(test::normal_vector(rng, 12));
    advances += net.maybe_advance_stage() ? 1 : 0;
  }
  CHECK(advances == 3);
  CHECK(net.current_stage() == 3);
  CHECK(net.feature_count() == 16);
  for (int s = 0; s < 4; ++s) CHECK(net.stage_input_width(s) == 12 + 4 * s);
  for (const auto& slot : net.slots()) CHECK(slot.column.inputs() == net.stage_input_width(slot.stage));
}

TEST_CASE("a single-stage network never advances") {
  RecurrentNet<double> net(staged(Topology::Columnar, 2, 3, 1, 1));
  std::mt19937_64 rng(0);
  for (int t = 0; t < 20; ++t) {
    net.step(test::normal_vector(rng, 2));
    CHECK_FALSE(net.maybe_advance_stage());
  }
  CHECK(net.feature_count() == 3);
}

TEST_CASE("stage constraints are validated") {
  CHECK_THROWS_AS(RecurrentNet<double>(staged(Topology::Constructive, 3, 2, 10, 3)), UsageError);
  CHECK_THROWS_AS(RecurrentNet<double>(staged(Topology::Columnar, 3, 2, 10, 2)), UsageError);
  CHECK_THROWS_AS(RecurrentNet<double>(staged(Topology::Ccn, 3, 0, 10, 2)), UsageError);
  CHECK_THROWS_AS(RecurrentNet<double>(staged(Topology::Tbptt, 3, 1, 10, 1)), UsageError);
  RecurrentNet<double> net(staged(Topology::Ccn, 3, 2, 10, 2));
  CHECK_THROWS_AS(net.step(VectorXd::Zero(4)), UsageError);
  VectorXd bad = VectorXd::Zero(3);
  bad[0] = INFINITY;
  CHECK_THROWS_AS(net.step(bad), NumericError);
}

TEST_CASE("parameter blocks are disjoint and stable across growth") {
  RecurrentNet<double> net(staged(Topology::Ccn, 5, 3, 1, 3));
  std::mt19937_64 rng(3);
  std::vector<Index> first_offsets;
  for (const auto& s : net.slots()) first_offsets.push_back(s.offset);
  net.step(test::normal_vector(rng, 5));
  net.maybe_advance_stage();
  net.step(test::normal_vector(rng, 5));
  net.maybe_advance_stage();
  std::set<Index> seen;
  for (std::size_t j = 0; j < net.slots().size(); ++j) {
    const auto& s = net.slots()[j];
    if (j < first_offsets.size()) CHECK(s.offset == first_offsets[j]);
    for (Index p = s.offset; p < s.offset + s.block_size(); ++p) CHECK(seen.insert(p).second);
  }
  CHECK(static_cast<Index>(seen.size()) == net.param_count());
}

TEST_CASE("later stages read earlier features from the same step") {
  std::mt19937_64 rng(21);
  RecurrentNet<double> net(staged(Topology::Constructive, 2, 1, 1000, 2));
  net.step(test::normal_vector(rng, 2));
  net.advance_stage();
  const auto before = net.slots();
  const VectorXd x = test::normal_vector(rng, 2);
  net.step(x);

  // Replay by hand: stage 0 forward, its normalized output, then stage 1.
  const auto& s0 = before[0];
  const auto n0 = forward(s0.column.params, s0.column.state, x);
  const double h0hat = s0.moments.normalize(n0.h);
  VectorXd in1(3);
  in1 << x, h0hat;
  const auto& s1 = before[1];
  const auto n1 = forward(s1.column.params, s1.column.state, in1);
  CHECK(net.slots()[0].column.state.h == n0.h);
  CHECK(net.slots()[1].column.state.h == n1.h);
}

TEST_CASE("frozen columns stay bit-identical for a long run") {
  std::mt19937_64 rng(5);
  RecurrentNet<double> net(staged(Topology::Ccn, 12, 4, 1000, 2));
  for (int t = 0; t < 1000; ++t) {
    net.step(test::normal_vector(rng, 12));
    net.apply_update(test::normal_vector(rng, net.param_count(), 1e-3));
    net.maybe_advance_stage();
  }
  REQUIRE(net.current_stage() == 1);
  std::vector<VectorXd> theta;
  std::vector<std::pair<double, double>> moments;
  std::vector<double> heads;
  for (int k = 0; k < 4; ++k) {
    const auto& s = net.slots()[static_cast<std::size_t>(k)];
    CHECK(s.frozen);
    CHECK(s.column.traces.size() == 0);
    theta.push_back(s.column.params.theta);
    moments.emplace_back(s.moments.mean, s.moments.var);
    heads.push_back(s.out_weight);
  }
  for (int t = 0; t < 100000; ++t) {
    net.step(test::normal_vector(rng, 12));
    VectorXd delta = test::normal_vector(rng, net.param_count(), 1e-3);
    net.clear_frozen(delta);
    net.apply_update(delta);
  }
  for (int k = 0; k < 4; ++k) {
    const auto& s = net.slots()[static_cast<std::size_t>(k)];
    CHECK(s.column.params.theta == theta[static_cast<std::size_t>(k)]);
    CHECK(s.moments.mean == moments[static_cast<std::size_t>(k)].first);
    CHECK(s.moments.var == moments[static_cast<std::size_t>(k)].second);
    CHECK(s.out_weight != heads[static_cast<std::size_t>(k)]);
    CHECK(net.gradient().segment(s.offset, s.column.param_count()).isZero());
    CHECK_FALSE(net.is_learnable(s.offset));
    CHECK(net.is_learnable(s.weight_offset()));
  }
}

TEST_CASE("columns of a columnar network are independent") {
  std::mt19937_64 rng(77);
  RecurrentNet<double> net(staged(Topology::Columnar, 4, 5, 1, 1));
  net.set_parameters(test::normal_vector(rng, net.param_count(), 0.7));
  const auto stream = test::normal_stream(rng, 20, 4);
  for (Index k = 0; k < net.feature_count(); ++k) CHECK(column_independence_check(net, k, stream) == 0.0);

  // Perturbing the observation moves every column.
  auto replay = [&](std::vector<VectorXd> s) {
    RecurrentNet<double> copy = net;
    for (const auto& x : s) copy.step(x);
    return copy.hidden();
  };
  auto shifted = stream;
  shifted[0][0] += 1e-4;
  const VectorXd a = replay(stream), b = replay(shifted);
  for (Index j = 0; j < a.size(); ++j) CHECK(a[j] != b[j]);
}

TEST_CASE("independence check contract") {
  RecurrentNet<double> staged_net(staged(Topology::Ccn, 2, 1, 1, 2));
  CHECK_THROWS_AS(column_independence_check(staged_net, 0, {}), UsageError);
  RecurrentNet<double> net(staged(Topology::Columnar, 2, 2, 1, 1));
  CHECK_THROWS_AS(column_independence_check(net, 2, {}), UsageError);
}

TEST_CASE("per-step cost is linear in the parameter count") {
  std::vector<double> ops;
  for (std::int64_t d = 1; d <= 5; ++d) {
    const ComputeShape shape{Topology::Columnar, d, 6, 1, 1};
    MeasureOptions opts;
    opts.steps = 50;
    ops.push_back(measure_ops(shape, opts).total);
  }
  for (std::size_t k = 2; k < ops.size(); ++k) CHECK(ops[k] - 2 * ops[k - 1] + ops[k - 2] == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  std::mt19937_64 rng(6);
  RecurrentNet<double> net(staged(Topology::Ccn, 3, 2, 5, 3));
  for (int t = 0; t < 12; ++t) {
    net.step(test::normal_vector(rng, 3));
    net.maybe_advance_stage();
  }
  std::stringstream a, b;
  BinaryWriter wa(a);
  net.save(wa);
  BinaryReader in(a);
  auto copy = RecurrentNet<double>::load(in);
  BinaryWriter wb(b);
  copy.save(wb);
  CHECK(a.str() == b.str());

  const auto stream = test::normal_stream(rng, 20, 3);
  for (const auto& x : stream) {
    CHECK(net.step(x) == copy.step(x));
    CHECK(net.maybe_advance_stage() == copy.maybe_advance_stage());
  }
  CHECK(net.parameters() == copy.parameters());
}
