// SPDX-License-Identifier: Apache-2.0
//
// Online TD(lambda) with accumulating eligibility traces. Works with any
// predictor exposing step(x) -> y, gradient(), apply_update(delta),
// clear_frozen(v), param_count() and reset_state().
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "ccn/binary_io.hpp"
#include "ccn/types.hpp"

namespace ccn {

// Adaptive: second moment of the prediction gradient.
// AdaptiveUpdate: second moment of the TD update delta * z itself.
enum class Optimizer { Sgd, Adaptive, AdaptiveUpdate };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct LearnerConfig {
  double step_size = 1e-4;
  double gamma = 0.90;
  double lambda = 0.99;
  Optimizer optimizer = Optimizer::Adaptive;
  double beta2 = 0.9999;
  double opt_eps = 1e-8;

  void validate() const {
    if (!(step_size > 0.0)) throw UsageError("step size must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("gamma must lie in [0,1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0,1]");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("beta2 must lie in [0,1)");
    if (!(opt_eps > 0.0)) throw UsageError("optimizer epsilon must be positive");
  }
};

template <typename Net>
class TdLearner {
 public:
  explicit TdLearner(const LearnerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  const LearnerConfig& config() const { return cfg_; }
  bool started() const { return started_; }
  double prediction() const { return y_; }
  const VectorXd& eligibility() const { return z_; }
  const VectorXd& second_moment() const { return v_; }
  const VectorXd& cached_gradient() const { return grad_prev_; }
  std::int64_t updates() const { return updates_; }

  /// Predicts for the first observation of a stream (or episode).
  double start(Net& net, const VectorXd& x) {
    y_ = net.step(x);
    grad_prev_ = net.gradient();
    z_ = VectorXd::Zero(net.param_count());
    if (v_.size() != net.param_count()) v_ = VectorXd::Zero(net.param_count());
    delta_buf_.resize(net.param_count());
    started_ = true;
    return y_;
  }

  /// One transition: predicts for x_next, forms the TD error against the
  /// cached prediction and updates the parameters. The eligibility trace takes
  /// the gradient cached from the previous prediction. On a terminal
  /// transition the bootstrap term is dropped, then the trace and the
  /// network's recurrent state are cleared; the next call restarts.
  double td_step(Net& net, const VectorXd& x_next, double cumulant, bool terminal = false) {
    return td_step(net, x_next, cumulant, terminal, [](double) {});
  }

  /// As above; `on_predict(y)` sees each new prediction before any parameter
  /// changes that use this step's data.
  template <typename OnPredict>
  double td_step(Net& net, const VectorXd& x_next, double cumulant, bool terminal, OnPredict&& on_predict) {
    if (!started_) {
      on_predict(start(net, x_next));
      return 0.0;
    }
    const double y_next = net.step(x_next);
    on_predict(y_next);
    const double gamma = terminal ? 0.0 : cfg_.gamma;
    const double delta = cumulant + gamma * y_next - y_;
    if (!std::isfinite(delta)) fault(net, delta);

    z_ = (cfg_.lambda * cfg_.gamma) * z_ + grad_prev_;
    if (cfg_.optimizer == Optimizer::Sgd) {
      delta_buf_ = (cfg_.step_size * delta) * z_;
    } else if (cfg_.optimizer == Optimizer::Adaptive) {
      v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad_prev_.cwiseAbs2();
      delta_buf_ = ((cfg_.step_size * delta) * z_.array() / (v_.array().sqrt() + cfg_.opt_eps)).matrix();
    } else {
      delta_buf_ = delta * z_;
      v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * delta_buf_.cwiseAbs2();
      delta_buf_ = (cfg_.step_size * delta_buf_.array() / (v_.array().sqrt() + cfg_.opt_eps)).matrix();
    }
    net.clear_frozen(delta_buf_);
    net.apply_update(delta_buf_);
    ++updates_;

    if (terminal) {
      net.reset_state();
      z_.setZero();
      started_ = false;
      return delta;
    }
    y_ = y_next;
    grad_prev_ = net.gradient();
    return delta;
  }

  /// Aligns z, v and the cached gradient with a network that just grew:
  /// new parameters start at zero and entries of frozen parameters are zeroed
  /// for good.
  void on_stage_advance(const Net& net) {
    const Index n = net.param_count();
    auto grow = [n](VectorXd& v) {
      const Index old = v.size();
      v.conservativeResize(n);
      if (n > old) v.tail(n - old).setZero();
    };
    grow(z_);
    grow(v_);
    grow(grad_prev_);
    net.clear_frozen(z_);
    net.clear_frozen(v_);
    net.clear_frozen(grad_prev_);
    delta_buf_.resize(n);
  }

  void save(BinaryWriter& out) const {
    out.u32(kFormatVersion);
    out.u8(started_ ? 1 : 0);
    out.f64(y_);
    out.i64(updates_);
    out.vec(z_);
    out.vec(v_);
    out.vec(grad_prev_);
  }

  void load(BinaryReader& in) {
    if (in.u32() != kFormatVersion) throw FormatError("unsupported learner record version");
    started_ = in.u8() != 0;
    y_ = in.f64();
    updates_ = in.i64();
    z_ = in.vec();
    v_ = in.vec();
    grad_prev_ = in.vec();
    delta_buf_.resize(z_.size());
  }

 private:
  static constexpr std::uint32_t kFormatVersion = 1;

  [[noreturn]] void fault(const Net& net, double delta) const {
    std::ostringstream msg;
    msg << "non-finite TD error (" << delta << ") at update " << updates_ << ", prediction " << y_
        << ", hidden features [";
    const auto h = net.hidden();
    for (Index j = 0; j < h.size(); ++j) msg << (j ? " " : "") << to_double(h[j]);
    msg << "]";
    throw NumericError(msg.str());
  }

  LearnerConfig cfg_;
  bool started_ = false;
  double y_ = 0.0;
  std::int64_t updates_ = 0;
  VectorXd z_;
  VectorXd v_;
  VectorXd grad_prev_;
  VectorXd delta_buf_;
};

}  // namespace ccn
