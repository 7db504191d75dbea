// SPDX-License-Identifier: Apache-2.0
#include "ccn/grad_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ccn::oracle {
namespace {

template <typename R>
R logistic(R z) {
  using std::exp;
  return R(1) / (R(1) + exp(-z));
}

template <typename R>
struct ColumnTapeT {
  std::vector<R> in;
  R i = 0, f = 0, o = 0, g = 0;
  R c = 0, h = 0, c_prev = 0, h_prev = 0;
  R mean = 0, denom = 1, hhat = 0;
};

template <typename R>
using TapeT = std::vector<std::vector<ColumnTapeT<R>>>;  // [time][column]
using ColumnTape = ColumnTapeT<double>;
using Tape = TapeT<double>;

template <typename R>
struct PinnedStats {
  std::vector<std::vector<R>> mean;
  std::vector<std::vector<R>> denom;
};

// One parameter nudged by `delta` in the working precision; p == 4m+8 is the
// outgoing weight.
template <typename R>
struct Nudge {
  std::size_t column = 0;
  Index param = -1;
  R delta = 0;
};

double weight(const SnapshotColumn& col, int gate, Index j) { return col.theta[static_cast<std::size_t>(gate * col.inputs + j)]; }
double recurrent(const SnapshotColumn& col, int gate) { return col.theta[static_cast<std::size_t>(4 * col.inputs + gate)]; }

template <typename R>
TapeT<R> run_forward(const NetSnapshot& net, const Stream& stream, std::size_t t, const PinnedStats<R>* pinned,
                     std::vector<R>* ys, const Nudge<R>& nudge = {}) {
  using std::max;
  using std::sqrt;
  using std::tanh;
  if (t >= stream.size()) throw UsageError("oracle time index out of range");
  const std::size_t K = net.columns.size();
  std::vector<std::vector<R>> theta(K);
  std::vector<R> out_weight(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& col = net.columns[k];
    theta[k].assign(col.theta.begin(), col.theta.end());
    out_weight[k] = col.out_weight;
    if (nudge.param >= 0 && nudge.column == k) {
      if (nudge.param < 4 * col.inputs + 8) theta[k][static_cast<std::size_t>(nudge.param)] += nudge.delta;
      else out_weight[k] += nudge.delta;
    }
  }
  std::vector<R> h(K), c(K), mean(K), var(K);
  for (std::size_t k = 0; k < K; ++k) {
    h[k] = net.columns[k].h0;
    c[k] = net.columns[k].c0;
    mean[k] = net.columns[k].mean0;
    var[k] = net.columns[k].var0;
  }
  const R beta = net.beta, eps = net.eps;
  TapeT<R> tape(t + 1, std::vector<ColumnTapeT<R>>(K));
  for (std::size_t tau = 0; tau <= t; ++tau) {
    const VectorXd& x = stream[tau];
    if (x.size() != net.input_width) throw UsageError("oracle observation width mismatch");
    std::vector<R> hhat(K, R(0));
    for (std::size_t k = 0; k < K; ++k) {
      const SnapshotColumn& col = net.columns[k];
      const std::vector<R>& th = theta[k];
      const Index m = col.inputs;
      ColumnTapeT<R>& r = tape[tau][k];
      r.in.resize(static_cast<std::size_t>(m));
      for (Index j = 0; j < m; ++j)
        r.in[static_cast<std::size_t>(j)] = j < net.input_width ? R(x[j]) : hhat[static_cast<std::size_t>(j - net.input_width)];
      R a[4];
      for (int gate = 0; gate < 4; ++gate) {
        R s = th[static_cast<std::size_t>(4 * m + 4 + gate)] + th[static_cast<std::size_t>(4 * m + gate)] * h[k];
        for (Index j = 0; j < m; ++j) s += th[static_cast<std::size_t>(gate * m + j)] * r.in[static_cast<std::size_t>(j)];
        a[gate] = s;
      }
      r.i = logistic(a[0]);
      r.f = logistic(a[1]);
      r.o = logistic(a[2]);
      r.g = tanh(a[3]);
      r.h_prev = h[k];
      r.c_prev = c[k];
      r.c = r.f * r.c_prev + r.i * r.g;
      r.h = r.o * tanh(r.c);
      h[k] = r.h;
      c[k] = r.c;

      if (!net.normalize) {
        r.mean = R(0);
        r.denom = R(1);
      } else if (pinned) {
        r.mean = pinned->mean[tau][k];
        r.denom = pinned->denom[tau][k];
      } else {
        if (!col.frozen) {
          const R before = mean[k];
          mean[k] = beta * mean[k] + (R(1) - beta) * r.h;
          var[k] = max(R(0), beta * var[k] + (R(1) - beta) * (mean[k] - r.h) * (before - r.h));
        }
        r.mean = mean[k];
        r.denom = max(eps, sqrt(var[k]));
      }
      r.hhat = (r.h - r.mean) / r.denom;
      hhat[k] = r.hhat;
    }
    if (ys) {
      R y = 0;
      for (std::size_t k = 0; k < K; ++k) y += out_weight[k] * hhat[k];
      ys->push_back(y);
    }
  }
  return tape;
}

}  // namespace

bool NetSnapshot::learnable(Index p) const {
  for (const auto& col : columns) {
    const Index n = 4 * col.inputs + 8;
    if (p == col.offset + n) return true;
    if (p >= col.offset && p < col.offset + n) return !col.frozen;
  }
  return false;
}

NetSnapshot snapshot(const RecurrentNet<double>& net) {
  NetSnapshot s;
  s.input_width = net.input_width();
  s.normalize = net.config().norm.enabled;
  s.beta = net.config().norm.beta;
  s.eps = net.config().norm.eps;
  s.param_count = net.param_count();
  for (const auto& slot : net.slots()) {
    SnapshotColumn col;
    col.stage = slot.stage;
    col.frozen = slot.frozen;
    col.inputs = slot.column.inputs();
    col.theta.assign(slot.column.params.theta.data(), slot.column.params.theta.data() + slot.column.params.theta.size());
    col.h0 = slot.column.state.h;
    col.c0 = slot.column.state.c;
    col.mean0 = slot.moments.mean;
    col.var0 = slot.moments.var;
    col.out_weight = slot.out_weight;
    col.offset = slot.offset;
    s.columns.push_back(std::move(col));
  }
  return s;
}

std::vector<double> predictions(const NetSnapshot& net, const Stream& stream, std::size_t t) {
  std::vector<double> ys;
  run_forward<double>(net, stream, t, nullptr, &ys);
  return ys;
}

VectorXd bptt_full(const NetSnapshot& net, const Stream& stream, std::size_t t) {
  const Tape tape = run_forward<double>(net, stream, t, nullptr, nullptr);
  const std::size_t K = net.columns.size();
  VectorXd grad = VectorXd::Zero(net.param_count);

  std::vector<double> dh_next(K, 0.0), dc_next(K, 0.0), dhhat(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const SnapshotColumn& col = net.columns[k];
    grad[col.offset + 4 * col.inputs + 8] = tape[t][k].hhat;
    dhhat[k] = col.out_weight;
  }

  for (std::size_t tau = t + 1; tau-- > 0;) {
    for (std::size_t k = K; k-- > 0;) {
      const SnapshotColumn& col = net.columns[k];
      const ColumnTape& r = tape[tau][k];
      const double dh = dhhat[k] / r.denom + dh_next[k];
      const double tc = std::tanh(r.c);
      const double dc = dc_next[k] + dh * r.o * (1.0 - tc * tc);
      const double dz[4] = {
          dc * r.g * r.i * (1.0 - r.i),
          dc * r.c_prev * r.f * (1.0 - r.f),
          dh * tc * r.o * (1.0 - r.o),
          dc * r.i * (1.0 - r.g * r.g),
      };
      if (!col.frozen) {
        for (int gate = 0; gate < 4; ++gate) {
          for (Index j = 0; j < col.inputs; ++j)
            grad[col.offset + gate * col.inputs + j] += dz[gate] * r.in[static_cast<std::size_t>(j)];
          grad[col.offset + 4 * col.inputs + gate] += dz[gate] * r.h_prev;
          grad[col.offset + 4 * col.inputs + 4 + gate] += dz[gate];
        }
      }
      double carry = 0.0;
      for (int gate = 0; gate < 4; ++gate) carry += dz[gate] * recurrent(col, gate);
      dh_next[k] = carry;
      dc_next[k] = dc * r.f;
      for (Index j = net.input_width; j < col.inputs; ++j) {
        double s = 0.0;
        for (int gate = 0; gate < 4; ++gate) s += dz[gate] * weight(col, gate, j);
        dhhat[static_cast<std::size_t>(j - net.input_width)] += s;
      }
    }
    std::fill(dhhat.begin(), dhhat.end(), 0.0);
  }
  return grad;
}

VectorXd finite_diff(const NetSnapshot& net, const Stream& stream, std::size_t t, double delta) {
  if (!(delta > 0.0)) throw UsageError("finite-difference step must be positive");
  // Replayed in extended precision so rounding stays far below the
  // truncation error of the central difference.
  using R = long double;
  const TapeT<R> base = run_forward<R>(net, stream, t, nullptr, nullptr);
  PinnedStats<R> pinned;
  pinned.mean.assign(t + 1, std::vector<R>(net.columns.size()));
  pinned.denom.assign(t + 1, std::vector<R>(net.columns.size()));
  for (std::size_t tau = 0; tau <= t; ++tau)
    for (std::size_t k = 0; k < net.columns.size(); ++k) {
      pinned.mean[tau][k] = base[tau][k].mean;
      pinned.denom[tau][k] = base[tau][k].denom;
    }

  auto y_at = [&](std::size_t k, Index p, R d) {
    std::vector<R> ys;
    run_forward<R>(net, stream, t, &pinned, &ys, Nudge<R>{k, p, d});
    return ys.back();
  };

  VectorXd grad = VectorXd::Zero(net.param_count);
  for (std::size_t k = 0; k < net.columns.size(); ++k) {
    const SnapshotColumn& col = net.columns[k];
    const Index n = 4 * col.inputs + 8;
    for (Index p = 0; p <= n; ++p) {
      if (p < n && col.frozen) continue;
      const R d = delta;
      grad[col.offset + p] = static_cast<double>((y_at(k, p, d) - y_at(k, p, -d)) / (2 * d));
    }
  }
  return grad;
}

namespace {

template <typename R>
struct DenseTapeT {
  std::vector<R> x, h_prev, c_prev, i, f, o, g, c, h;
};
using DenseTape = DenseTapeT<double>;

template <typename R>
std::vector<DenseTapeT<R>> dense_forward_tape(const std::vector<R>& theta, Index m, Index d, const Stream& stream,
                                              std::size_t t) {
  using std::tanh;
  if (t >= stream.size()) throw UsageError("oracle time index out of range");
  const R* W = theta.data();
  const R* U = W + 4 * d * m;
  const R* b = U + 4 * d * d;
  std::vector<R> h(static_cast<std::size_t>(d), R(0)), c(static_cast<std::size_t>(d), R(0));
  std::vector<DenseTapeT<R>> tape;
  for (std::size_t tau = 0; tau <= t; ++tau) {
    DenseTapeT<R> r;
    r.x.assign(stream[tau].data(), stream[tau].data() + m);
    r.h_prev = h;
    r.c_prev = c;
    std::vector<R> a(static_cast<std::size_t>(4 * d));
    for (Index row = 0; row < 4 * d; ++row) {
      R s = b[row];
      for (Index q = 0; q < m; ++q) s += W[row * m + q] * r.x[static_cast<std::size_t>(q)];
      for (Index q = 0; q < d; ++q) s += U[row * d + q] * h[static_cast<std::size_t>(q)];
      a[static_cast<std::size_t>(row)] = s;
    }
    for (Index j = 0; j < d; ++j) {
      const auto J = static_cast<std::size_t>(j), D = static_cast<std::size_t>(d);
      r.i.push_back(logistic(a[J]));
      r.f.push_back(logistic(a[D + J]));
      r.o.push_back(logistic(a[2 * D + J]));
      r.g.push_back(tanh(a[3 * D + J]));
      r.c.push_back(r.f[J] * c[J] + r.i[J] * r.g[J]);
      r.h.push_back(r.o[J] * tanh(r.c[J]));
    }
    h = r.h;
    c = r.c;
    tape.push_back(std::move(r));
  }
  return tape;
}

template <typename R>
R dense_readout(const std::vector<R>& theta, Index m, Index d, const Stream& stream, std::size_t t) {
  const auto tape = dense_forward_tape<R>(theta, m, d, stream, t);
  const std::size_t core = static_cast<std::size_t>(dense_param_count(m, d) - d);
  R y = 0;
  for (Index j = 0; j < d; ++j) y += theta[core + static_cast<std::size_t>(j)] * tape.back().h[static_cast<std::size_t>(j)];
  return y;
}

}  // namespace

double dense_prediction(const DenseLstmParams<double>& p, const Stream& stream, std::size_t t) {
  const std::vector<double> theta(p.theta.data(), p.theta.data() + p.theta.size());
  return dense_readout(theta, p.inputs, p.hidden, stream, t);
}

VectorXd dense_finite_diff(const DenseLstmParams<double>& p, const Stream& stream, std::size_t t, double delta) {
  if (!(delta > 0.0)) throw UsageError("finite-difference step must be positive");
  using R = long double;
  const std::vector<R> theta(p.theta.data(), p.theta.data() + p.theta.size());
  VectorXd grad(p.theta.size());
  for (Index q = 0; q < p.theta.size(); ++q) {
    std::vector<R> plus = theta, minus = theta;
    plus[static_cast<std::size_t>(q)] += R(delta);
    minus[static_cast<std::size_t>(q)] -= R(delta);
    const R diff = dense_readout(plus, p.inputs, p.hidden, stream, t) - dense_readout(minus, p.inputs, p.hidden, stream, t);
    grad[q] = static_cast<double>(diff / (2 * R(delta)));
  }
  return grad;
}

VectorXd dense_bptt_full(const DenseLstmParams<double>& p, const Stream& stream, std::size_t t) {
  const std::vector<double> theta(p.theta.data(), p.theta.data() + p.theta.size());
  const auto tape = dense_forward_tape<double>(theta, p.inputs, p.hidden, stream, t);
  const Index d = p.hidden, m = p.inputs;
  const auto D = static_cast<std::size_t>(d);
  const double* U = p.theta.data() + 4 * d * m;
  VectorXd grad = VectorXd::Zero(p.theta.size());
  const Index u_off = 4 * d * m, b_off = u_off + 4 * d * d, w_off = b_off + 4 * d;

  std::vector<double> dh(D), dc(D, 0.0), dz(4 * D);
  for (std::size_t j = 0; j < D; ++j) {
    dh[j] = p.theta[w_off + static_cast<Index>(j)];
    grad[w_off + static_cast<Index>(j)] = tape[t].h[j];
  }
  for (std::size_t tau = t + 1; tau-- > 0;) {
    const DenseTape& r = tape[tau];
    for (std::size_t j = 0; j < D; ++j) {
      const double tc = std::tanh(r.c[j]);
      dc[j] += dh[j] * r.o[j] * (1.0 - tc * tc);
      dz[j] = dc[j] * r.g[j] * r.i[j] * (1.0 - r.i[j]);
      dz[D + j] = dc[j] * r.c_prev[j] * r.f[j] * (1.0 - r.f[j]);
      dz[2 * D + j] = dh[j] * tc * r.o[j] * (1.0 - r.o[j]);
      dz[3 * D + j] = dc[j] * r.i[j] * (1.0 - r.g[j] * r.g[j]);
      dc[j] *= r.f[j];
    }
    for (Index row = 0; row < 4 * d; ++row) {
      const double z = dz[static_cast<std::size_t>(row)];
      for (Index q = 0; q < m; ++q) grad[row * m + q] += z * r.x[static_cast<std::size_t>(q)];
      for (Index q = 0; q < d; ++q) grad[u_off + row * d + q] += z * r.h_prev[static_cast<std::size_t>(q)];
      grad[b_off + row] += z;
    }
    for (Index q = 0; q < d; ++q) {
      double s = 0.0;
      for (Index row = 0; row < 4 * d; ++row) s += dz[static_cast<std::size_t>(row)] * U[row * d + q];
      dh[static_cast<std::size_t>(q)] = s;
    }
  }
  return grad;
}

VectorXd finite_diff(const std::function<double(const VectorXd&)>& f, const VectorXd& theta, double delta,
                     const std::vector<bool>& mask) {
  if (!(delta > 0.0)) throw UsageError("finite-difference step must be positive");
  VectorXd grad = VectorXd::Zero(theta.size());
  for (Index p = 0; p < theta.size(); ++p) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(p)]) continue;
    VectorXd plus = theta, minus = theta;
    plus[p] += delta;
    minus[p] -= delta;
    grad[p] = (f(plus) - f(minus)) / (2.0 * delta);
  }
  return grad;
}

namespace {

Stream random_stream(std::mt19937_64& rng, Index width, std::size_t steps) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Stream s(steps, VectorXd(width));
  for (auto& x : s)
    for (Index j = 0; j < width; ++j) x[j] = n01(rng);
  return s;
}

void randomize_learnable(RecurrentNet<double>& net, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  VectorXd p = net.parameters();
  for (Index i = 0; i < p.size(); ++i)
    if (net.is_learnable(i)) p[i] = n(rng);
  net.set_parameters(p);
}

void fold_fd(GradientCheck& out, const VectorXd& fd, const VectorXd& exact, double floor) {
  for (Index p = 0; p < exact.size(); ++p) {
    const double diff = std::abs(fd[p] - exact[p]);
    out.max_abs_fd = std::max(out.max_abs_fd, diff);
    if (std::abs(exact[p]) > floor) out.max_rel_fd = std::max(out.max_rel_fd, diff / std::abs(exact[p]));
  }
}

}  // namespace

GradientCheck verify_gradients(Topology topology, int instances, std::size_t steps, std::uint64_t seed,
                               double fd_delta, double fd_floor) {
  if (instances < 1 || steps < 1) throw UsageError("need at least one instance and one step");
  GradientCheck out;
  out.topology = topology;
  out.instances = instances;
  const Index width = 5;
  std::mt19937_64 rng(seed);
  const std::size_t samples[] = {0, steps / 2, steps - 1};

  for (int n = 0; n < instances; ++n) {
    if (topology == Topology::Tbptt) {
      DenseConfig cfg;
      cfg.input_width = width;
      cfg.hidden = 3;
      cfg.truncation = static_cast<std::int64_t>(steps) + 1;
      cfg.seed = rng();
      DenseNet<double> net(cfg);
      std::normal_distribution<double> nw(0.0, 0.5);
      VectorXd p = net.parameters();
      for (Index i = 0; i < p.size(); ++i) p[i] = nw(rng);
      net.set_parameters(p);
      const Stream stream = random_stream(rng, width, steps);
      DenseLstmParams<double> params = net.params();
      for (std::size_t t = 0; t < steps; ++t) {
        net.step(stream[t]);
        const VectorXd exact = dense_bptt_full(params, stream, t);
        out.max_abs_bptt = std::max(out.max_abs_bptt, (net.gradient() - exact).cwiseAbs().maxCoeff());
        if (std::find(std::begin(samples), std::end(samples), t) != std::end(samples)) {
          fold_fd(out, dense_finite_diff(params, stream, t, fd_delta), exact, fd_floor);
        }
      }
      continue;
    }

    NetConfig cfg;
    cfg.topology = topology;
    cfg.input_width = width;
    cfg.seed = rng();
    cfg.norm.enabled = true;
    if (topology == Topology::Columnar) cfg.stages = {5, 1, 1};
    else if (topology == Topology::Ccn) cfg.stages = {2, 1000000, 2};
    else cfg.stages = {1, 1000000, 3};
    RecurrentNet<double> net(cfg);
    randomize_learnable(net, rng);
    while (net.current_stage() + 1 < cfg.stages.total_stages) {
      for (const auto& x : random_stream(rng, width, 25)) net.step(x);
      net.advance_stage();
      randomize_learnable(net, rng);
    }
    const NetSnapshot snap = snapshot(net);
    const Stream stream = random_stream(rng, width, steps);
    for (std::size_t t = 0; t < steps; ++t) {
      net.step(stream[t]);
      const VectorXd exact = bptt_full(snap, stream, t);
      out.max_abs_bptt = std::max(out.max_abs_bptt, (net.gradient() - exact).cwiseAbs().maxCoeff());
      if (std::find(std::begin(samples), std::end(samples), t) != std::end(samples))
        fold_fd(out, finite_diff(snap, stream, t, fd_delta), exact, fd_floor);
    }
  }
  return out;
}

}  // namespace ccn::oracle
