// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ccn/compute.hpp"
#include "ccn/dense_lstm.hpp"
#include "ccn/experiment.hpp"
#include "ccn/feature_norm.hpp"
#include "ccn/grad_oracle.hpp"
#include "ccn/recurrent_net.hpp"
#include "ccn/td_learner.hpp"
#include "ccn/trace_pattern.hpp"
#include "test_util.hpp"

using namespace ccn;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %d %s: %s (%s)\n", id, pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const std::string& line) {
  std::printf("  info: %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

void gradient_exactness() {
  bool pass = true;
  std::string detail;
  for (auto topo : {Topology::Columnar, Topology::Ccn, Topology::Constructive, Topology::Tbptt}) {
    const auto r = oracle::verify_gradients(topo, 50, 200, 2024);
    const bool ok = r.instances >= 50 && r.max_abs_bptt <= 1e-10 && r.max_rel_fd <= 1e-5;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: %d instances, max |online - bptt| %.2e, max fd rel %.2e", to_string(topo).c_str(),
                  r.instances, r.max_abs_bptt, r.max_rel_fd);
    if (topo == Topology::Tbptt) {
      info(std::string(buf) + (ok ? "" : " (outside tolerance)"));
      continue;
    }
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + std::string(buf);
  }
  report(1, "gradient exactness", pass, detail);
}

void width_one_equivalence() {
  std::mt19937_64 rng(11);
  const Index m = 5;
  const int steps = 1000;
  NetConfig nc = NetConfig::columnar(m, 1);
  nc.norm.enabled = false;
  RecurrentNet<double> column(nc);
  column.set_parameters(test::normal_vector(rng, column.param_count(), 0.5));
  DenseConfig dc;
  dc.input_width = m;
  dc.hidden = 1;
  dc.truncation = steps + 1;
  DenseNet<double> dense(dc);
  dense.set_parameters(column.parameters());
  LearnerConfig lc;
  lc.optimizer = Optimizer::Sgd;
  lc.step_size = 1e-2;
  TdLearner<RecurrentNet<double>> a(lc);
  TdLearner<DenseNet<double>> b(lc);
  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    const VectorXd x = test::normal_vector(rng, m);
    const double c = x[0] > 1.0 ? 1.0 : 0.0;
    a.td_step(column, x, c);
    b.td_step(dense, x, c);
    worst = std::max(worst, test::max_abs_diff(column.parameters(), dense.parameters()));
  }
  const double moved = (column.parameters() - dense.parameters()).norm();
  report(2, "width-1 equivalence", worst <= 1e-9,
         fmt("max parameter deviation over 1000 sgd steps %.2e", worst) + fmt(", final gap %.2e", moved));
}

void truncation_monotonicity() {
  const Index m = 4, d = 3;
  const std::size_t steps = 40;
  const int instances = 20;
  std::vector<double> mean_err(21, 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < instances; ++i) {
    DenseLstmParams<double> params(m, d);
    params.theta = test::normal_vector(rng, params.theta.size(), 0.5);
    const auto stream = test::normal_stream(rng, steps, m);
    const VectorXd full = oracle::dense_bptt_full(params, stream, steps - 1);
    for (std::int64_t k = 1; k <= 20; ++k) {
      DenseConfig dc;
      dc.input_width = m;
      dc.hidden = d;
      dc.truncation = k;
      DenseNet<double> net(dc);
      net.set_parameters(params.theta);
      for (const auto& x : stream) net.step(x);
      mean_err[static_cast<std::size_t>(k)] += (net.gradient() - full).norm() / instances;
    }
  }
  bool pass = true;
  for (std::size_t k = 2; k <= 20; ++k) pass = pass && mean_err[k] <= mean_err[k - 1];
  report(3, "truncation bias monotonicity", pass,
         fmt("mean |g_k - g_full| at k=1 %.3e", mean_err[1]) + fmt(", k=5 %.3e", mean_err[5]) +
             fmt(", k=10 %.3e", mean_err[10]) + fmt(", k=20 %.3e", mean_err[20]));
}

void compute_budget() {
  struct Case {
    ComputeShape shape;
    std::int64_t expected;  // hand evaluation, -1 when none is listed
  };
  const Case cases[] = {
      {{Topology::Columnar, 10, 12, 1, 0}, 3920},
      {{Topology::Ccn, 16, 12, 4, 0}, 3360},
      {{Topology::Tbptt, 4, 12, 0, 15}, 4352},
      {{Topology::Constructive, 5, 12, 1, 0}, -1},
  };
  bool estimates_ok = true, measured_ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const auto est = estimate_ops(c.shape);
    if (c.expected >= 0 && est != c.expected) estimates_ok = false;
    MeasureOptions opts;
    opts.steps = 1000;
    const auto meas = measure_ops(c.shape, opts);
    const double ratio = meas.total / static_cast<double>(est);
    measured_ok = measured_ok && ratio >= 0.65 && ratio <= 1.35;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s estimate %lld measured %.0f (forward %.0f, learning %.0f) ratio %.2f",
                  to_string(c.shape.topology).c_str(), static_cast<long long>(est), meas.total, meas.forward,
                  meas.learning, ratio);
    info(buf);
    detail += (detail.empty() ? "" : ", ") + to_string(c.shape.topology) + fmt(" %.2f", ratio);
  }
  report(4, "compute budget", estimates_ok && measured_ok,
         std::string("estimates ") + (estimates_ok ? "exact" : "wrong") + "; measured/estimate " + detail +
             " against +/-35%");
}

void normalization() {
  NormConfig cfg{true, 0.99999, 0.001};
  RunningMoments<double> m(cfg);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(-4.0, 3.0);
  const auto warm = static_cast<long>(10.0 / (1.0 - cfg.beta));
  for (long t = 0; t < warm; ++t) observe_and_normalize(m, dist(rng));
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int t = 0; t < n; ++t) {
    const double v = observe_and_normalize(m, dist(rng));
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;

  // Floor bound on a mix of constant runs, spikes and drifts.
  RunningMoments<double> f(cfg);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bool bound = true;
  for (int t = 0; t < 300000; ++t) {
    double h = 0.0;
    if (t % 50000 < 20000) h = 0.25;
    else if (t % 997 == 0) h = 50.0 * u(rng);
    else h = 1e-4 * u(rng) + 1e-6 * t;
    const double out = observe_and_normalize(f, h);
    bound = bound && std::abs(out) <= std::abs(h - f.mean) / cfg.eps;
  }
  const bool pass = std::abs(mean) <= 0.05 && var >= 0.8 && var <= 1.2 && bound;
  report(5, "normalization", pass,
         fmt("mean %.4f", mean) + fmt(", variance %.4f", var) + ", floor bound " + (bound ? "held" : "violated"));
}

struct LearningOutcome {
  int halved = 0;
  int below_zero = 0;
  double first = 0.0, final = 0.0, zero = 0.0;
};

LearningOutcome trace_learning(Optimizer opt, int seeds) {
  ExperimentConfig cfg;
  cfg.topology = Topology::Ccn;
  cfg.features = 16;
  cfg.features_per_stage = 4;
  cfg.steps_per_stage = 250000;
  cfg.total_steps = 1000000;
  cfg.learner.optimizer = opt;
  cfg.checkpoint = false;
  LearningOutcome out;
  for (int s = 0; s < seeds; ++s) {
    Run run(cfg, static_cast<std::uint64_t>(s));
    run.run_to_end();
    const double first = run.first_window_error(), final = run.stats().mean();
    const double zero = run.stats().zero_predictor_mean();
    out.halved += final <= 0.5 * first;
    out.below_zero += final < zero;
    out.first += first / seeds;
    out.final += final / seeds;
    out.zero += zero / seeds;
  }
  return out;
}

void learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = trace_learning(Optimizer::Adaptive, 10);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = r.halved >= 9 && r.below_zero == 10;
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "default optimizer: %d/10 seeds halved, %d/10 below zero predictor; mean first %.4g final %.4g zero "
                "%.4g; %.0f s",
                r.halved, r.below_zero, r.first, r.final, r.zero, secs);
  report(6, "trace-patterning learning", pass, buf);
  const auto u = trace_learning(Optimizer::AdaptiveUpdate, 10);
  std::snprintf(buf, sizeof buf,
                "adaptive_update optimizer: %d/10 seeds halved, %d/10 below zero predictor; mean first %.4g final "
                "%.4g zero %.4g",
                u.halved, u.below_zero, u.first, u.final, u.zero);
  info(buf);
}

void staging() {
  NetConfig nc;
  nc.topology = Topology::Ccn;
  nc.input_width = 12;
  nc.stages = {4, 5000, 4};
  nc.seed = 8;
  RecurrentNet<double> net(nc);
  TdLearner<RecurrentNet<double>> td(LearnerConfig{});
  TraceConfig tc;
  tc.seed = 8;
  TracePatternEnv env(tc);

  struct Frozen {
    std::size_t slot;
    VectorXd theta;
    double mean, var, head;
  };
  std::vector<Frozen> frozen;
  bool identical = true;
  auto verify = [&] {
    for (const auto& f : frozen) {
      const auto& s = net.slots()[f.slot];
      identical = identical && s.frozen && s.column.params.theta == f.theta && s.moments.mean == f.mean &&
                  s.moments.var == f.var;
    }
  };
  for (int t = 0; t < 30000; ++t) {
    const auto rec = env.next();
    td.td_step(net, rec.observation, rec.cumulant);
    if (net.maybe_advance_stage()) {
      td.on_stage_advance(net);
      verify();
      for (std::size_t k = frozen.size(); k < net.slots().size(); ++k) {
        const auto& s = net.slots()[k];
        if (!s.frozen) break;
        frozen.push_back({k, s.column.params.theta, s.moments.mean, s.moments.var, s.out_weight});
      }
    }
    if (t % 500 == 0) verify();
  }
  verify();
  int heads_moved = 0;
  for (const auto& f : frozen) heads_moved += net.slots()[f.slot].out_weight != f.head;
  const bool pass = frozen.size() == 12 && identical && heads_moved == static_cast<int>(frozen.size());
  report(7, "staging correctness", pass,
         std::to_string(frozen.size()) + " frozen columns " + (identical ? "bit-identical" : "changed") + ", " +
             std::to_string(heads_moved) + " of their head weights still learning");
}

void independence() {
  std::mt19937_64 rng(9);
  int checked = 0, nonzero = 0;
  for (int n = 0; n < 10; ++n) {
    NetConfig nc = NetConfig::columnar(6, 8);
    nc.seed = static_cast<std::uint64_t>(n);
    RecurrentNet<double> net(nc);
    net.set_parameters(test::normal_vector(rng, net.param_count(), 0.7));
    const auto stream = test::normal_stream(rng, 30, 6);
    for (Index k = 0; k < net.feature_count(); ++k) {
      ++checked;
      nonzero += column_independence_check(net, k, stream) != 0.0;
    }
  }
  report(8, "column independence", nonzero == 0,
         std::to_string(checked) + " perturbed columns, " + std::to_string(nonzero) + " with non-zero cross terms");
}

struct Recorder : RunObserver {
  std::vector<double> y;
  void on_predict(std::int64_t, double p, std::int64_t) override { y.push_back(p); }
};

void determinism() {
  test::TempDir dir("acceptance");
  ExperimentConfig cfg;
  cfg.topology = Topology::Ccn;
  cfg.features = 8;
  cfg.steps_per_stage = 5000;
  cfg.total_steps = 20000;
  cfg.window = 1000;
  cfg.cadence = 1000;
  cfg.seeds = {0, 1, 2};
  cfg.workers = 2;
  cfg.output_dir = dir.str();
  cfg.checkpoint = true;

  auto snapshot = [&] {
    std::vector<std::string> files;
    for (const char* f : {"config.txt", "summary.csv", "seed_0/curve.csv", "seed_1/curve.csv", "seed_2/curve.csv",
                          "seed_0/checkpoint.bin", "seed_2/checkpoint.bin"})
      files.push_back(slurp(fs::path(dir.str()) / f));
    return files;
  };
  run_experiment(cfg);
  const auto first = snapshot();
  run_experiment(cfg);
  const bool rerun = first == snapshot() && !first[1].empty();

  bool resume = true;
  for (auto topo : {Topology::Ccn, Topology::Tbptt}) {
    ExperimentConfig rc = cfg;
    rc.topology = topo;
    rc.features = topo == Topology::Tbptt ? 4 : 8;
    rc.total_steps = 17000;
    Run a(rc, 5);
    a.advance(7000);
    a.save_checkpoint(dir.file("resume.bin"));
    Run b = Run::load_checkpoint(dir.file("resume.bin"));
    Recorder ra, rb;
    a.advance(10000, &ra);
    b.advance(10000, &rb);
    resume = resume && ra.y.size() == 10000 && ra.y == rb.y && a.parameters() == b.parameters() &&
             a.curve_csv() == b.curve_csv();
  }
  report(9, "determinism and persistence", rerun && resume,
         std::string("reruns ") + (rerun ? "byte-identical" : "differ") + ", checkpoint resume over 10k steps " +
             (resume ? "identical" : "diverged"));
}

}  // namespace

int main() {
  try {
    gradient_exactness();
    width_one_equivalence();
    truncation_monotonicity();
    compute_budget();
    normalization();
    learning();
    staging();
    independence();
    determinism();
  } catch (const std::exception& e) {
    std::printf("error: %s\n", e.what());
    return 2;
  }
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
