// SPDX-License-Identifier: Apache-2.0
//
// Columnar, Constructive and Columnar-Constructive networks built from
// independent LSTM columns. Columns are grouped into stages; only the newest
// stage learns its incoming and recurrent weights, every feature keeps a
// learnable outgoing weight.
//
// Learnable parameters are laid out column by column in creation order:
//   [ theta_1 (4 m_1 + 8) | w_1 | theta_2 | w_2 | ... ]
// A new stage appends blocks, so indices of existing parameters never move.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccn/binary_io.hpp"
#include "ccn/counted.hpp"
#include "ccn/feature_norm.hpp"
#include "ccn/lstm_column.hpp"
#include "ccn/types.hpp"

namespace ccn {

struct StageSpec {
  int features_per_stage = 4;
  std::int64_t steps_per_stage = 250000;
  int total_stages = 4;

  void validate(Topology topology) const {
    if (features_per_stage < 1) throw UsageError("features_per_stage must be >= 1");
    if (steps_per_stage < 1) throw UsageError("steps_per_stage must be >= 1");
    if (total_stages < 1) throw UsageError("total_stages must be >= 1");
    if (topology == Topology::Columnar && total_stages != 1)
      throw UsageError("a columnar network has exactly one stage");
    if (topology == Topology::Constructive && features_per_stage != 1)
      throw UsageError("a constructive network learns one feature per stage");
    if (topology == Topology::Tbptt) throw UsageError("T-BPTT is not a staged network");
  }
};

struct NetConfig {
  Topology topology = Topology::Ccn;
  Index input_width = 12;
  StageSpec stages;
  NormConfig norm;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_width < 1) throw UsageError("observation width must be >= 1");
    stages.validate(topology);
    if (norm.enabled) norm.validate();
  }

  static NetConfig columnar(Index input_width, int features) {
    NetConfig c;
    c.topology = Topology::Columnar;
    c.input_width = input_width;
    c.stages = {features, 1, 1};
    return c;
  }
};

template <typename Scalar>
class RecurrentNet {
 public:
  struct Slot {
    Column<Scalar> column;
    RunningMoments<Scalar> moments;
    Scalar out_weight{0.0};
    int stage = 0;
    bool frozen = false;
    Index offset = 0;  // start of this column's block in the parameter layout

    Index block_size() const { return column.param_count() + 1; }
    Index weight_offset() const { return offset + column.param_count(); }
  };

  explicit RecurrentNet(const NetConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    features_ = Vec<Scalar>::Zero(cfg_.input_width);
    grad_ = Vec<Scalar>::Zero(0);
    add_stage();
  }

  const NetConfig& config() const { return cfg_; }
  Index input_width() const { return cfg_.input_width; }
  Index feature_count() const { return static_cast<Index>(slots_.size()); }
  Index param_count() const { return grad_.size(); }
  int current_stage() const { return current_stage_; }
  std::int64_t steps() const { return steps_; }
  const std::vector<Slot>& slots() const { return slots_; }

  /// Input width of the columns in a given stage.
  Index stage_input_width(int stage) const {
    return cfg_.input_width + static_cast<Index>(stage) * cfg_.stages.features_per_stage;
  }

  /// Advances every column one step and returns the prediction. The gradient
  /// of the prediction with respect to the learnable parameters is available
  /// from gradient() afterwards.
  template <typename Derived>
  Scalar step(const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != cfg_.input_width)
      throw UsageError("observation width " + std::to_string(x.size()) + ", expected " +
                       std::to_string(cfg_.input_width));
    if (!all_finite(x)) throw NumericError("non-finite observation at step " + std::to_string(steps_));

    ScopedOpPhase phase(OpPhase::Forward);
    features_.head(cfg_.input_width) = x;
    std::size_t k = 0;
    while (k < slots_.size()) {
      const int stage = slots_[k].stage;
      const Index width = stage_input_width(stage);
      std::size_t end = k;
      for (; end < slots_.size() && slots_[end].stage == stage; ++end) {
        Slot& s = slots_[end];
        const auto input = features_.head(width);
        if (s.frozen) {
          s.column.advance(input);
        } else {
          CellState<Scalar> next = forward(s.column.params, s.column.state, input);
          {
            ScopedOpPhase learning(OpPhase::Learning);
            update_traces(s.column.params, s.column.state, next, input, s.column.traces);
          }
          s.column.state = next;
        }
      }
      // Later stages see this stage's features from the same time step.
      for (std::size_t j = k; j < end; ++j) {
        Slot& s = slots_[j];
        const Scalar h = s.column.state.h;
        features_[cfg_.input_width + static_cast<Index>(j)] =
            cfg_.norm.enabled ? observe_and_normalize(s.moments, h) : h;
      }
      k = end;
    }

    Scalar y(0.0);
    for (std::size_t j = 0; j < slots_.size(); ++j)
      y += slots_[j].out_weight * features_[cfg_.input_width + static_cast<Index>(j)];

    ScopedOpPhase learning(OpPhase::Learning);
    for (std::size_t j = 0; j < slots_.size(); ++j) {
      const Slot& s = slots_[j];
      grad_[s.weight_offset()] = features_[cfg_.input_width + static_cast<Index>(j)];
      if (s.frozen) continue;
      const Scalar scale =
          cfg_.norm.enabled ? Scalar(s.out_weight / s.moments.denominator()) : s.out_weight;
      grad_.segment(s.offset, s.column.param_count()) = scale * s.column.traces.th;
    }
    ++steps_;
    return y;
  }

  const Vec<Scalar>& gradient() const { return grad_; }

  /// Adds delta to every learnable parameter. Entries of frozen columns are
  /// skipped so their values stay bit-identical.
  void apply_update(const Vec<Scalar>& delta) {
    if (delta.size() != param_count()) throw UsageError("update length does not match parameter count");
    for (Slot& s : slots_) {
      if (!s.frozen) s.column.params.theta += delta.segment(s.offset, s.column.param_count());
      s.out_weight += delta[s.weight_offset()];
    }
  }

  /// Zeroes the entries of `v` that belong to frozen column parameters.
  void clear_frozen(Vec<Scalar>& v) const {
    for (const Slot& s : slots_)
      if (s.frozen) v.segment(s.offset, s.column.param_count()).setZero();
  }

  bool is_learnable(Index param) const {
    for (const Slot& s : slots_) {
      if (param == s.weight_offset()) return true;
      if (param >= s.offset && param < s.weight_offset()) return !s.frozen;
    }
    return false;
  }

  /// Call once per step after the learning update. Returns true when a new
  /// stage was started.
  bool maybe_advance_stage() {
    if (steps_ == 0 || steps_ % cfg_.stages.steps_per_stage != 0) return false;
    return advance_stage();
  }

  /// Freezes the current stage and instantiates the next one, if any remain.
  bool advance_stage() {
    if (current_stage_ + 1 >= cfg_.stages.total_stages) return false;
    for (Slot& s : slots_) {
      if (s.frozen) continue;
      s.frozen = true;
      s.moments.frozen = true;
      s.column.traces = TraceState<Scalar>{};
      grad_.segment(s.offset, s.column.param_count()).setZero();
    }
    ++current_stage_;
    add_stage();
    return true;
  }

  /// Clears hidden and cell states and all traces (episode boundary).
  void reset_state() {
    for (Slot& s : slots_) s.column.reset();
    grad_.setZero();
  }

  Vec<Scalar> parameters() const {
    Vec<Scalar> p(param_count());
    for (const Slot& s : slots_) {
      p.segment(s.offset, s.column.param_count()) = s.column.params.theta;
      p[s.weight_offset()] = s.out_weight;
    }
    return p;
  }

  /// Overwrites all parameters, frozen ones included. Intended for tests and
  /// restoring known settings.
  void set_parameters(const Vec<Scalar>& p) {
    if (p.size() != param_count()) throw UsageError("parameter vector length mismatch");
    for (Slot& s : slots_) {
      s.column.params.theta = p.segment(s.offset, s.column.param_count());
      s.out_weight = p[s.weight_offset()];
    }
  }

  /// Raw (unnormalized) hidden values of all features.
  Vec<Scalar> hidden() const {
    Vec<Scalar> h(feature_count());
    for (std::size_t j = 0; j < slots_.size(); ++j) h[static_cast<Index>(j)] = slots_[j].column.state.h;
    return h;
  }

  /// Normalized features from the last step.
  auto features() const { return features_.tail(feature_count()); }

  void save(BinaryWriter& out) const {
    out.u32(kFormatVersion);
    out.u32(static_cast<std::uint32_t>(cfg_.topology));
    out.u64(static_cast<std::uint64_t>(cfg_.input_width));
    out.u32(static_cast<std::uint32_t>(cfg_.stages.features_per_stage));
    out.i64(cfg_.stages.steps_per_stage);
    out.u32(static_cast<std::uint32_t>(cfg_.stages.total_stages));
    out.u8(cfg_.norm.enabled ? 1 : 0);
    out.f64(cfg_.norm.beta);
    out.f64(cfg_.norm.eps);
    out.u64(cfg_.seed);
    std::ostringstream rng_state;
    rng_state << rng_;
    out.str(rng_state.str());
    out.u32(static_cast<std::uint32_t>(current_stage_));
    out.i64(steps_);
    out.u64(slots_.size());
    for (const Slot& s : slots_) {
      out.u32(static_cast<std::uint32_t>(s.stage));
      out.u8(s.frozen ? 1 : 0);
      out.vec(as_double(s.column.params.theta));
      out.f64(to_double(s.column.state.h));
      out.f64(to_double(s.column.state.c));
      for (int g = 0; g < 4; ++g) out.f64(to_double(s.column.state.gates[g]));
      out.vec(as_double(s.column.traces.th));
      out.vec(as_double(s.column.traces.tc));
      out.f64(to_double(s.moments.mean));
      out.f64(to_double(s.moments.var));
      out.u8(s.moments.frozen ? 1 : 0);
      out.f64(to_double(s.out_weight));
    }
    out.vec(as_double(features_));
    out.vec(as_double(grad_));
  }

  static RecurrentNet load(BinaryReader& in) {
    if (in.u32() != kFormatVersion) throw FormatError("unsupported network record version");
    NetConfig cfg;
    cfg.topology = static_cast<Topology>(in.u32());
    cfg.input_width = static_cast<Index>(in.u64());
    cfg.stages.features_per_stage = static_cast<int>(in.u32());
    cfg.stages.steps_per_stage = in.i64();
    cfg.stages.total_stages = static_cast<int>(in.u32());
    cfg.norm.enabled = in.u8() != 0;
    cfg.norm.beta = in.f64();
    cfg.norm.eps = in.f64();
    cfg.seed = in.u64();
    RecurrentNet net(cfg);
    std::istringstream rng_state(in.str());
    rng_state >> net.rng_;
    net.current_stage_ = static_cast<int>(in.u32());
    net.steps_ = in.i64();
    const std::uint64_t n = in.u64();
    net.slots_.clear();
    Index offset = 0;
    for (std::uint64_t j = 0; j < n; ++j) {
      Slot s;
      s.stage = static_cast<int>(in.u32());
      s.frozen = in.u8() != 0;
      const VectorXd theta = in.vec();
      s.column = Column<Scalar>((theta.size() - 8) / 4);
      s.column.params.theta = theta.cast<Scalar>();
      s.column.state.h = Scalar(in.f64());
      s.column.state.c = Scalar(in.f64());
      for (int g = 0; g < 4; ++g) s.column.state.gates[g] = Scalar(in.f64());
      s.column.traces.th = in.vec().cast<Scalar>();
      s.column.traces.tc = in.vec().cast<Scalar>();
      s.moments = RunningMoments<Scalar>(cfg.norm);
      s.moments.mean = Scalar(in.f64());
      s.moments.var = Scalar(in.f64());
      s.moments.frozen = in.u8() != 0;
      s.out_weight = Scalar(in.f64());
      s.offset = offset;
      offset += s.block_size();
      net.slots_.push_back(std::move(s));
    }
    net.features_ = in.vec().cast<Scalar>();
    net.grad_ = in.vec().cast<Scalar>();
    if (net.grad_.size() != offset || net.features_.size() != cfg.input_width + static_cast<Index>(n))
      throw FormatError("inconsistent network record");
    return net;
  }

 private:
  static constexpr std::uint32_t kFormatVersion = 1;

  static VectorXd as_double(const Vec<Scalar>& v) {
    VectorXd out(v.size());
    for (Index i = 0; i < v.size(); ++i) out[i] = to_double(v[i]);
    return out;
  }

  void add_stage() {
    const int stage = current_stage_;
    const Index width = stage_input_width(stage);
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    std::uniform_real_distribution<double> init(-bound, bound);
    Index offset = param_count();
    for (int k = 0; k < cfg_.stages.features_per_stage; ++k) {
      Slot s;
      s.column = Column<Scalar>(width);
      // Input and recurrent weights get fan-in scaling, biases start at zero.
      for (Index p = 0; p < 4 * width + 4; ++p) s.column.params.theta[p] = Scalar(init(rng_));
      s.moments = RunningMoments<Scalar>(cfg_.norm);
      s.stage = stage;
      s.offset = offset;
      offset += s.block_size();
      slots_.push_back(std::move(s));
    }
    const Index old_size = grad_.size();
    grad_.conservativeResize(offset);
    grad_.tail(offset - old_size).setZero();
    const Index old_features = features_.size();
    features_.conservativeResize(cfg_.input_width + feature_count());
    features_.tail(features_.size() - old_features).setZero();
  }

  NetConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Slot> slots_;
  Vec<Scalar> features_;  // [observation | normalized features]
  Vec<Scalar> grad_;
  int current_stage_ = 0;
  std::int64_t steps_ = 0;
};

/// Largest change in any other column's hidden value after perturbing each
/// parameter (and the outgoing weight) of column k by delta and replaying the
/// stream. For a columnar network the answer is exactly zero.
template <typename Scalar>
double column_independence_check(const RecurrentNet<Scalar>& net, Index k,
                                 const std::vector<Vec<Scalar>>& stream, double delta = 1e-4) {
  if (net.config().stages.total_stages != 1) throw UsageError("independence check needs a single-stage network");
  if (k < 0 || k >= net.feature_count()) throw UsageError("column index out of range");

  auto run = [&](RecurrentNet<Scalar> copy) {
    for (const auto& x : stream) copy.step(x);
    return copy.hidden();
  };
  const Vec<Scalar> base = run(net);
  const auto& slot = net.slots()[static_cast<std::size_t>(k)];
  double worst = 0.0;
  for (Index p = slot.offset; p <= slot.weight_offset(); ++p) {
    RecurrentNet<Scalar> perturbed = net;
    Vec<Scalar> params = perturbed.parameters();
    params[p] += Scalar(delta);
    perturbed.set_parameters(params);
    const Vec<Scalar> h = run(std::move(perturbed));
    for (Index j = 0; j < h.size(); ++j)
      if (j != k) worst = std::max(worst, std::abs(to_double(h[j]) - to_double(base[j])));
  }
  return worst;
}

}  // namespace ccn
