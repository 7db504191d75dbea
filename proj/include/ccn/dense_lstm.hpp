// SPDX-License-Identifier: Apache-2.0
//
// Fully connected LSTM trained by truncated BPTT over a sliding window. The
// gradient is recomputed every step from the last k stored activations.
//
// Parameter layout: [ W (4d x m, row-major) | U (4d x d, row-major) | b (4d) | w (d) ]
// with gate blocks ordered i, f, o, g. For d = 1 this coincides with the
// layout of a single column followed by its outgoing weight.
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <type_traits>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccn/binary_io.hpp"
#include "ccn/counted.hpp"
#include "ccn/feature_norm.hpp"
#include "ccn/types.hpp"

namespace ccn {

struct DenseConfig {
  Index input_width = 12;
  Index hidden = 4;
  std::int64_t truncation = 15;
  NormConfig norm{false, 0.99999, 0.001};
  std::uint64_t seed = 0;

  void validate() const {
    if (input_width < 1) throw UsageError("observation width must be >= 1");
    if (hidden < 1) throw UsageError("hidden width must be >= 1");
    if (truncation < 1) throw UsageError("truncation length must be >= 1");
    if (norm.enabled) norm.validate();
  }
};

inline Index dense_param_count(Index m, Index d) { return 4 * d * m + 4 * d * d + 4 * d + d; }

template <typename Scalar>
struct DenseLstmParams {
  Index inputs = 0;
  Index hidden = 0;
  Vec<Scalar> theta;

  DenseLstmParams() = default;
  DenseLstmParams(Index m, Index d) : inputs(m), hidden(d), theta(Vec<Scalar>::Zero(dense_param_count(m, d))) {}

  Index core_count() const { return theta.size() - hidden; }

  Eigen::Map<RowMat<Scalar>> W() { return {theta.data(), 4 * hidden, inputs}; }
  Eigen::Map<const RowMat<Scalar>> W() const { return {theta.data(), 4 * hidden, inputs}; }
  Eigen::Map<RowMat<Scalar>> U() { return {theta.data() + 4 * hidden * inputs, 4 * hidden, hidden}; }
  Eigen::Map<const RowMat<Scalar>> U() const { return {theta.data() + 4 * hidden * inputs, 4 * hidden, hidden}; }
  auto b() { return theta.segment(4 * hidden * (inputs + hidden), 4 * hidden); }
  auto b() const { return theta.segment(4 * hidden * (inputs + hidden), 4 * hidden); }
  auto w() { return theta.tail(hidden); }
  auto w() const { return theta.tail(hidden); }
};

template <typename Scalar>
struct DenseState {
  Vec<Scalar> h;
  Vec<Scalar> c;

  DenseState() = default;
  explicit DenseState(Index d) : h(Vec<Scalar>::Zero(d)), c(Vec<Scalar>::Zero(d)) {}
};

/// Everything one backward step needs, including the recurrent matrix that
/// was in effect, so the backward pass differentiates the computation that
/// actually happened even while parameters change online.
template <typename Scalar>
struct DenseRecord {
  RowMat<Scalar> U;
  Vec<Scalar> x;
  Vec<Scalar> h_prev;
  Vec<Scalar> c_prev;
  Vec<Scalar> gates;  // [i; f; o; g], 4d
  Vec<Scalar> c;
  Vec<Scalar> h;
};

template <typename Scalar, typename Derived>
DenseRecord<Scalar> dense_forward(const DenseLstmParams<Scalar>& p, const DenseState<Scalar>& prev,
                                  const Eigen::MatrixBase<Derived>& x) {
  using std::tanh;
  const Index d = p.hidden;
  if (x.size() != p.inputs) throw UsageError("dense LSTM input width mismatch");
  if (prev.h.size() != d || prev.c.size() != d) throw UsageError("dense LSTM state width mismatch");

  DenseRecord<Scalar> r;
  r.U = p.U();
  r.x = x;
  r.h_prev = prev.h;
  r.c_prev = prev.c;
  r.gates = p.W() * x + p.U() * prev.h + p.b();
  for (Index j = 0; j < 3 * d; ++j) r.gates[j] = sigmoid(r.gates[j]);
  for (Index j = 3 * d; j < 4 * d; ++j) r.gates[j] = tanh(r.gates[j]);
  const auto i = r.gates.segment(0, d).array();
  const auto f = r.gates.segment(d, d).array();
  const auto o = r.gates.segment(2 * d, d).array();
  const auto g = r.gates.segment(3 * d, d).array();
  r.c = (f * prev.c.array() + i * g).matrix();
  r.h.resize(d);
  for (Index j = 0; j < d; ++j) r.h[j] = o[j] * tanh(r.c[j]);
  return r;
}

/// Sliding window of the last k forward records.
template <typename Scalar>
class TruncationWindow {
 public:
  explicit TruncationWindow(std::int64_t k = 1) : k_(k) {
    if (k < 1) throw UsageError("truncation length must be >= 1");
  }

  void push(DenseRecord<Scalar> r) {
    records_.push_back(std::move(r));
    while (static_cast<std::int64_t>(records_.size()) > k_) records_.pop_front();
  }
  void clear() { records_.clear(); }

  std::int64_t truncation() const { return k_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const DenseRecord<Scalar>& operator[](std::size_t i) const { return records_[i]; }
  const DenseRecord<Scalar>& newest() const { return records_.back(); }

 private:
  std::int64_t k_;
  std::deque<DenseRecord<Scalar>> records_;
};

/// Backpropagates dy/dh_t through the stored records (newest first) and writes
/// the gradient over W, U and b into `grad` (length core_count()). State older
/// than the window is treated as constant.
template <typename Scalar>
void truncated_gradient(const DenseLstmParams<Scalar>& p, const TruncationWindow<Scalar>& window,
                        const Vec<Scalar>& dy_dh, Eigen::Ref<std::type_identity_t<Vec<Scalar>>> grad) {
  using std::tanh;
  const Index d = p.hidden;
  const Index m = p.inputs;
  if (grad.size() != p.core_count()) throw UsageError("gradient buffer length mismatch");
  grad.setZero();
  if (window.empty()) return;

  Eigen::Map<RowMat<Scalar>> gW(grad.data(), 4 * d, m);
  Eigen::Map<RowMat<Scalar>> gU(grad.data() + 4 * d * m, 4 * d, d);
  auto gb = grad.segment(4 * d * (m + d), 4 * d);

  const Scalar one(1.0);
  Vec<Scalar> dh = dy_dh;
  Vec<Scalar> dc = Vec<Scalar>::Zero(d);
  Vec<Scalar> dz(4 * d);
  for (std::size_t n = window.size(); n-- > 0;) {
    const DenseRecord<Scalar>& r = window[n];
    for (Index j = 0; j < d; ++j) {
      const Scalar i = r.gates[j], f = r.gates[d + j], o = r.gates[2 * d + j], g = r.gates[3 * d + j];
      const Scalar tc = tanh(r.c[j]);
      dc[j] += dh[j] * (o * (one - tc * tc));
      dz[j] = (dc[j] * g) * (i * (one - i));
      dz[d + j] = (dc[j] * r.c_prev[j]) * (f * (one - f));
      dz[2 * d + j] = (dh[j] * tc) * (o * (one - o));
      dz[3 * d + j] = (dc[j] * i) * (one - g * g);
      dc[j] = dc[j] * f;
    }
    gW.noalias() += dz * r.x.transpose();
    gU.noalias() += dz * r.h_prev.transpose();
    gb += dz;
    if (n > 0) dh.noalias() = r.U.transpose() * dz;
  }
}

template <typename Scalar>
class DenseNet {
 public:
  explicit DenseNet(const DenseConfig& cfg)
      : cfg_(cfg), params_(cfg.input_width, cfg.hidden), state_(cfg.hidden), window_(cfg.truncation) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const double wb = 1.0 / std::sqrt(static_cast<double>(cfg_.input_width));
    const double ub = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    std::uniform_real_distribution<double> w_init(-wb, wb), u_init(-ub, ub);
    auto W = params_.W();
    for (Index r = 0; r < W.rows(); ++r)
      for (Index c = 0; c < W.cols(); ++c) W(r, c) = Scalar(w_init(rng));
    auto U = params_.U();
    for (Index r = 0; r < U.rows(); ++r)
      for (Index c = 0; c < U.cols(); ++c) U(r, c) = Scalar(u_init(rng));
    for (Index j = 0; j < cfg_.hidden; ++j) moments_.emplace_back(cfg_.norm);
    grad_ = Vec<Scalar>::Zero(params_.theta.size());
    features_ = Vec<Scalar>::Zero(cfg_.hidden);
  }

  const DenseConfig& config() const { return cfg_; }
  Index input_width() const { return cfg_.input_width; }
  Index feature_count() const { return cfg_.hidden; }
  Index param_count() const { return params_.theta.size(); }
  std::int64_t steps() const { return steps_; }
  const DenseLstmParams<Scalar>& params() const { return params_; }
  const TruncationWindow<Scalar>& window() const { return window_; }
  const DenseState<Scalar>& state() const { return state_; }

  template <typename Derived>
  Scalar step(const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != cfg_.input_width) throw UsageError("observation width mismatch");
    if (!all_finite(x)) throw NumericError("non-finite observation at step " + std::to_string(steps_));
    const Index d = cfg_.hidden;

    Vec<Scalar> dy_dh(d);
    Scalar y(0.0);
    {
      ScopedOpPhase phase(OpPhase::Forward);
      DenseRecord<Scalar> r = dense_forward(params_, state_, x);
      state_.h = r.h;
      state_.c = r.c;
      window_.push(std::move(r));
      for (Index j = 0; j < d; ++j) {
        const Scalar h = state_.h[j];
        features_[j] = cfg_.norm.enabled ? observe_and_normalize(moments_[static_cast<std::size_t>(j)], h) : h;
        y += params_.w()[j] * features_[j];
      }
    }
    ScopedOpPhase phase(OpPhase::Learning);
    for (Index j = 0; j < d; ++j)
      dy_dh[j] = cfg_.norm.enabled ? Scalar(params_.w()[j] / moments_[static_cast<std::size_t>(j)].denominator())
                                   : params_.w()[j];
    truncated_gradient(params_, window_, dy_dh, grad_.head(params_.core_count()));
    grad_.tail(d) = features_;
    ++steps_;
    return y;
  }

  const Vec<Scalar>& gradient() const { return grad_; }

  void apply_update(const Vec<Scalar>& delta) {
    if (delta.size() != param_count()) throw UsageError("update length does not match parameter count");
    params_.theta += delta;
  }

  void clear_frozen(Vec<Scalar>&) const {}
  bool maybe_advance_stage() { return false; }
  int current_stage() const { return 0; }

  void reset_state() {
    state_ = DenseState<Scalar>(cfg_.hidden);
    window_.clear();
    grad_.setZero();
  }

  Vec<Scalar> parameters() const { return params_.theta; }
  void set_parameters(const Vec<Scalar>& p) {
    if (p.size() != param_count()) throw UsageError("parameter vector length mismatch");
    params_.theta = p;
  }
  Vec<Scalar> hidden() const { return state_.h; }

  void save(BinaryWriter& out) const {
    out.u32(kFormatVersion);
    out.u64(static_cast<std::uint64_t>(cfg_.input_width));
    out.u64(static_cast<std::uint64_t>(cfg_.hidden));
    out.i64(cfg_.truncation);
    out.u8(cfg_.norm.enabled ? 1 : 0);
    out.f64(cfg_.norm.beta);
    out.f64(cfg_.norm.eps);
    out.u64(cfg_.seed);
    out.i64(steps_);
    out.vec(as_double(params_.theta));
    out.vec(as_double(state_.h));
    out.vec(as_double(state_.c));
    for (const auto& m : moments_) {
      out.f64(to_double(m.mean));
      out.f64(to_double(m.var));
    }
    out.u64(window_.size());
    for (std::size_t n = 0; n < window_.size(); ++n) {
      const auto& r = window_[n];
      const Vec<Scalar> u_flat = Eigen::Map<const Vec<Scalar>>(r.U.data(), r.U.size());
      out.vec(as_double(u_flat));
      for (const Vec<Scalar>* v : {&r.x, &r.h_prev, &r.c_prev, &r.gates, &r.c, &r.h}) out.vec(as_double(*v));
    }
    out.vec(as_double(features_));
    out.vec(as_double(grad_));
  }

  static DenseNet load(BinaryReader& in) {
    if (in.u32() != kFormatVersion) throw FormatError("unsupported dense record version");
    DenseConfig cfg;
    cfg.input_width = static_cast<Index>(in.u64());
    cfg.hidden = static_cast<Index>(in.u64());
    cfg.truncation = in.i64();
    cfg.norm.enabled = in.u8() != 0;
    cfg.norm.beta = in.f64();
    cfg.norm.eps = in.f64();
    cfg.seed = in.u64();
    DenseNet net(cfg);
    net.steps_ = in.i64();
    net.params_.theta = in.vec().cast<Scalar>();
    net.state_.h = in.vec().cast<Scalar>();
    net.state_.c = in.vec().cast<Scalar>();
    for (auto& m : net.moments_) {
      m.mean = Scalar(in.f64());
      m.var = Scalar(in.f64());
    }
    const std::uint64_t n = in.u64();
    for (std::uint64_t j = 0; j < n; ++j) {
      DenseRecord<Scalar> r;
      const Vec<Scalar> u_flat = in.vec().cast<Scalar>();
      if (u_flat.size() != 4 * cfg.hidden * cfg.hidden) throw FormatError("bad recurrent matrix record");
      r.U = Eigen::Map<const RowMat<Scalar>>(u_flat.data(), 4 * cfg.hidden, cfg.hidden);
      for (Vec<Scalar>* v : {&r.x, &r.h_prev, &r.c_prev, &r.gates, &r.c, &r.h}) *v = in.vec().cast<Scalar>();
      net.window_.push(std::move(r));
    }
    net.features_ = in.vec().cast<Scalar>();
    net.grad_ = in.vec().cast<Scalar>();
    if (net.params_.theta.size() != dense_param_count(cfg.input_width, cfg.hidden) ||
        net.grad_.size() != net.params_.theta.size())
      throw FormatError("inconsistent dense record");
    return net;
  }

 private:
  static constexpr std::uint32_t kFormatVersion = 1;

  static VectorXd as_double(const Vec<Scalar>& v) {
    VectorXd out(v.size());
    for (Index i = 0; i < v.size(); ++i) out[i] = to_double(v[i]);
    return out;
  }

  DenseConfig cfg_;
  DenseLstmParams<Scalar> params_;
  DenseState<Scalar> state_;
  TruncationWindow<Scalar> window_;
  std::vector<RunningMoments<Scalar>> moments_;
  Vec<Scalar> features_;
  Vec<Scalar> grad_;
  std::int64_t steps_ = 0;
};

}  // namespace ccn
