// SPDX-License-Identifier: Apache-2.0
#include "ccn/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "ccn/compute.hpp"
#include "ccn/dense_lstm.hpp"
#include "ccn/recurrent_net.hpp"
#include "ccn/stream_io.hpp"
#include "ccn/td_learner.hpp"
#include "ccn/trace_pattern.hpp"

namespace fs = std::filesystem;

namespace ccn {

// ---------------------------------------------------------------------------
// RunStats

RunStats::RunStats(std::int64_t window) : window_(window) {
  if (window < 1) throw UsageError("metric window must be >= 1");
  errors_.assign(static_cast<std::size_t>(window), 0.0);
  targets_.assign(static_cast<std::size_t>(window), 0.0);
}

void RunStats::add(double prediction, double target) {
  const auto slot = static_cast<std::size_t>(count_ % window_);
  const double e = prediction - target;
  errors_[slot] = e * e;
  targets_[slot] = target * target;
  ++count_;
}

namespace {
// Sums the ring buffer oldest-first so the result matches a forward scan.
double ring_mean(const std::vector<double>& buf, std::int64_t count, std::int64_t window) {
  const std::int64_t n = std::min(count, window);
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::int64_t start = count - n;
  double sum = 0.0;
  for (std::int64_t t = start; t < count; ++t) sum += buf[static_cast<std::size_t>(t % window)];
  return sum / static_cast<double>(n);
}
}  // namespace

double RunStats::mean() const { return ring_mean(errors_, count_, window_); }
double RunStats::zero_predictor_mean() const { return ring_mean(targets_, count_, window_); }

void RunStats::save(BinaryWriter& out) const {
  out.i64(window_);
  out.i64(count_);
  out.vec(Eigen::Map<const VectorXd>(errors_.data(), window_));
  out.vec(Eigen::Map<const VectorXd>(targets_.data(), window_));
}

void RunStats::load(BinaryReader& in) {
  window_ = in.i64();
  count_ = in.i64();
  const VectorXd e = in.vec();
  const VectorXd g = in.vec();
  if (window_ < 1 || e.size() != window_ || g.size() != window_) throw FormatError("corrupt run statistics");
  errors_.assign(e.data(), e.data() + e.size());
  targets_.assign(g.data(), g.data() + g.size());
}

// ---------------------------------------------------------------------------
// Stream sources

namespace {

class Source {
 public:
  virtual ~Source() = default;
  virtual StepRecord next() = 0;
  virtual Index width() const = 0;
  virtual std::string save_state() const = 0;
  virtual void load_state(const std::string& s) = 0;
};

class TraceSource final : public Source {
 public:
  explicit TraceSource(const TraceConfig& cfg) : env_(cfg) {}
  StepRecord next() override { return env_.next(); }
  Index width() const override { return env_.observation_width(); }
  std::string save_state() const override { return env_.save_state(); }
  void load_state(const std::string& s) override { env_.load_state(s); }

 private:
  TracePatternEnv env_;
};

class ReplaySource final : public Source {
 public:
  explicit ReplaySource(const std::string& path) : reader_(path) {}
  StepRecord next() override {
    auto rec = reader_.next();
    if (!rec) throw StreamError(StreamErrc::Truncated, "replay stream exhausted");
    return std::move(*rec);
  }
  Index width() const override { return static_cast<Index>(reader_.header().width); }
  std::string save_state() const override { return std::to_string(reader_.position()); }
  void load_state(const std::string& s) override { reader_.seek(std::stoull(s)); }

 private:
  StreamReader reader_;
};

TraceConfig trace_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TraceConfig t = cfg.trace;
  t.seed = seed;
  return t;
}

// Network seeds are decorrelated from the environment seed.
std::uint64_t net_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull; }

// ---------------------------------------------------------------------------
// Network + learner behind one interface

class Engine {
 public:
  virtual ~Engine() = default;
  virtual void transition(const StepRecord& rec, const std::function<void(double)>& on_predict) = 0;
  virtual bool maybe_advance_stage() = 0;
  virtual int stage() const = 0;
  virtual std::int64_t updates() const = 0;
  virtual VectorXd parameters() const = 0;
  virtual double ops_per_step() const = 0;
  virtual void save(BinaryWriter& out) const = 0;
};

template <typename Net>
class EngineImpl final : public Engine {
 public:
  EngineImpl(Net net, const LearnerConfig& lc) : net_(std::move(net)), learner_(lc) {}

  void transition(const StepRecord& rec, const std::function<void(double)>& on_predict) override {
    learner_.td_step(net_, rec.observation, rec.cumulant, rec.terminal, on_predict);
  }
  bool maybe_advance_stage() override {
    if (!net_.maybe_advance_stage()) return false;
    learner_.on_stage_advance(net_);
    return true;
  }
  int stage() const override { return net_.current_stage(); }
  std::int64_t updates() const override { return learner_.updates(); }
  VectorXd parameters() const override { return net_.parameters(); }
  double ops_per_step() const override;
  void save(BinaryWriter& out) const override {
    net_.save(out);
    learner_.save(out);
  }

  static std::unique_ptr<Engine> load(BinaryReader& in, const LearnerConfig& lc) {
    auto e = std::make_unique<EngineImpl>(Net::load(in), lc);
    e->learner_.load(in);
    return e;
  }

 private:
  Net net_;
  TdLearner<Net> learner_;
};

template <>
double EngineImpl<RecurrentNet<double>>::ops_per_step() const {
  const auto& c = net_.config();
  ComputeShape shape;
  shape.topology = c.topology;
  shape.features = net_.feature_count();
  shape.inputs = c.input_width;
  shape.per_stage = c.stages.features_per_stage;
  return static_cast<double>(estimate_ops(shape));
}

template <>
double EngineImpl<DenseNet<double>>::ops_per_step() const {
  const auto& c = net_.config();
  return static_cast<double>(tbptt_ops(c.truncation, c.hidden, c.input_width));
}

enum class EngineKind : std::uint8_t { Staged = 1, Dense = 2 };

std::unique_ptr<Engine> make_engine(const ExperimentConfig& cfg, Index width, std::uint64_t seed) {
  if (cfg.topology == Topology::Tbptt) {
    DenseConfig dc;
    dc.input_width = width;
    dc.hidden = cfg.features;
    dc.truncation = cfg.truncation;
    dc.norm = cfg.norm();
    dc.seed = net_seed(seed);
    return std::make_unique<EngineImpl<DenseNet<double>>>(DenseNet<double>(dc), cfg.learner);
  }
  NetConfig nc;
  nc.topology = cfg.topology;
  nc.input_width = width;
  nc.norm = cfg.norm();
  nc.seed = net_seed(seed);
  if (cfg.topology == Topology::Columnar)
    nc.stages = {cfg.features, cfg.total_steps, 1};
  else
    nc.stages = {cfg.features_per_stage, cfg.steps_per_stage, cfg.stage_count()};
  return std::make_unique<EngineImpl<RecurrentNet<double>>>(RecurrentNet<double>(nc), cfg.learner);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr char kCheckpointMagic[8] = {'C', 'C', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Run

struct Run::Impl {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::unique_ptr<Source> source;
  std::unique_ptr<Engine> engine;
  std::vector<double> returns;
  std::vector<std::uint8_t> scored;  // 1 where the step's prediction is scored
  std::int64_t total = 0;
  std::int64_t t = 0;
  RunStats stats;
  double first_window = std::numeric_limits<double>::quiet_NaN();
  std::vector<CurvePoint> curve;

  Impl(const ExperimentConfig& c, std::uint64_t s) : cfg(c), seed(s), stats(c.window) {
    cfg.validate();
    if (cfg.env == EnvKind::TracePatterning) {
      source = std::make_unique<TraceSource>(trace_config(cfg, seed));
      total = cfg.total_steps;
      // The first pass replays the generator far enough to pin down every
      // scored return.
      TracePatternEnv env(trace_config(cfg, seed));
      const std::size_t n = static_cast<std::size_t>(total) + return_horizon(cfg.learner.gamma);
      std::vector<double> cumulants(n);
      for (auto& c : cumulants) c = env.next().cumulant;
      Returns r = ground_truth_returns(cumulants, cfg.learner.gamma);
      r.values.resize(static_cast<std::size_t>(total));
      returns = std::move(r.values);
      scored.assign(static_cast<std::size_t>(total), 1);
    } else {
      StreamReader reader(cfg.replay_path);
      std::vector<double> cumulants;
      std::vector<std::uint8_t> terminals;
      cumulants.reserve(reader.size());
      terminals.reserve(reader.size());
      while (auto rec = reader.next()) {
        cumulants.push_back(rec->cumulant);
        terminals.push_back(rec->terminal ? 1 : 0);
      }
      total = std::min<std::int64_t>(cfg.total_steps, static_cast<std::int64_t>(cumulants.size()));
      if (total < 2) throw UsageError("replay stream needs at least two records");
      Returns r = ground_truth_returns(cumulants, terminals, cfg.learner.gamma);
      scored.assign(static_cast<std::size_t>(total), 0);
      for (std::int64_t i = 0; i < total; ++i)
        scored[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i) < r.valid && !terminals[static_cast<std::size_t>(i)];
      r.values.resize(static_cast<std::size_t>(total));
      returns = std::move(r.values);
      source = std::make_unique<ReplaySource>(cfg.replay_path);
    }
  }

  void advance(std::int64_t n, RunObserver* obs) {
    const std::int64_t end = std::min(total, t + n);
    std::function<void(double)> on_predict = [&](double y) {
      if (obs) obs->on_predict(t, y, engine->updates());
      if (scored[static_cast<std::size_t>(t)]) {
        stats.add(y, returns[static_cast<std::size_t>(t)]);
        if (stats.count() == stats.window()) first_window = stats.mean();
      }
    };
    while (t < end) {
      const StepRecord rec = source->next();
      engine->transition(rec, on_predict);
      engine->maybe_advance_stage();
      if (obs) obs->on_learn(t, engine->updates());
      ++t;
      if (t % cfg.cadence == 0 || t == total) curve.push_back({t, stats.mean(), engine->ops_per_step(), engine->stage()});
    }
  }
};

Run::Run(const ExperimentConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>(cfg, seed)) {
  impl_->engine = make_engine(impl_->cfg, impl_->source->width(), seed);
}
Run::Run(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Run::~Run() = default;
Run::Run(Run&&) noexcept = default;
Run& Run::operator=(Run&&) noexcept = default;

const ExperimentConfig& Run::config() const { return impl_->cfg; }
std::uint64_t Run::seed() const { return impl_->seed; }
std::int64_t Run::step() const { return impl_->t; }
std::int64_t Run::total_steps() const { return impl_->total; }
bool Run::done() const { return impl_->t >= impl_->total; }
int Run::stage() const { return impl_->engine->stage(); }
void Run::advance(std::int64_t n, RunObserver* observer) { impl_->advance(n, observer); }
void Run::run_to_end(RunObserver* observer) { impl_->advance(impl_->total - impl_->t, observer); }
const RunStats& Run::stats() const { return impl_->stats; }
const std::vector<CurvePoint>& Run::curve() const { return impl_->curve; }
double Run::first_window_error() const { return impl_->first_window; }
double Run::ops_per_step() const { return impl_->engine->ops_per_step(); }
VectorXd Run::parameters() const { return impl_->engine->parameters(); }
const std::vector<double>& Run::returns() const { return impl_->returns; }

std::string Run::curve_csv() const {
  std::string out = "step,error,ops,stage\n";
  for (const auto& p : impl_->curve)
    out += std::to_string(p.step) + "," + fmt(p.error) + "," + fmt(p.ops) + "," + std::to_string(p.stage) + "\n";
  return out;
}

void Run::save_checkpoint(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint '" + tmp + "'");
    BinaryWriter out(f);
    out.bytes(kCheckpointMagic, 8);
    out.u32(kCheckpointVersion);
    out.str(to_text(impl_->cfg));
    out.u64(impl_->seed);
    out.i64(impl_->t);
    out.str(impl_->source->save_state());
    out.u8(static_cast<std::uint8_t>(impl_->cfg.topology == Topology::Tbptt ? EngineKind::Dense : EngineKind::Staged));
    impl_->engine->save(out);
    impl_->stats.save(out);
    out.f64(impl_->first_window);
    out.u64(impl_->curve.size());
    for (const auto& p : impl_->curve) {
      out.i64(p.step);
      out.f64(p.error);
      out.f64(p.ops);
      out.u32(static_cast<std::uint32_t>(p.stage));
    }
    f.flush();
    if (!f) throw std::runtime_error("short write to checkpoint '" + tmp + "'");
  }
  fs::rename(tmp, path);
}

Run Run::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  BinaryReader in(f);
  char magic[8];
  in.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("'" + path + "' is not a checkpoint");
  if (in.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const ExperimentConfig cfg = parse_config(in.str());
  const std::uint64_t seed = in.u64();
  auto impl = std::make_unique<Impl>(cfg, seed);
  impl->t = in.i64();
  impl->source->load_state(in.str());
  const auto kind = static_cast<EngineKind>(in.u8());
  if (kind == EngineKind::Dense)
    impl->engine = EngineImpl<DenseNet<double>>::load(in, cfg.learner);
  else if (kind == EngineKind::Staged)
    impl->engine = EngineImpl<RecurrentNet<double>>::load(in, cfg.learner);
  else
    throw FormatError("unknown network kind in checkpoint");
  impl->stats.load(in);
  impl->first_window = in.f64();
  const std::uint64_t n = in.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    CurvePoint p;
    p.step = in.i64();
    p.error = in.f64();
    p.ops = in.f64();
    p.stage = static_cast<int>(in.u32());
    impl->curve.push_back(p);
  }
  return Run(std::move(impl));
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
}

fs::path point_dir(const GridPoint& p) {
  fs::path dir = p.config.output_dir;
  if (!p.label.empty()) dir /= p.label;
  return dir;
}

SeedResult run_one(const GridPoint& point, std::uint64_t seed) {
  SeedResult res;
  res.label = point.label;
  res.seed = seed;
  const fs::path dir = point_dir(point) / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);
  res.dir = dir.string();
  fs::remove(dir / "fault.txt");

  Run run(point.config, seed);
  try {
    run.run_to_end();
  } catch (const NumericError& e) {
    res.faulted = true;
    res.fault = e.what();
    write_text(dir / "fault.txt", "step " + std::to_string(run.step()) + ": " + e.what() + "\n");
  }
  write_text(dir / "curve.csv", run.curve_csv());
  if (point.config.checkpoint && !res.faulted) run.save_checkpoint((dir / "checkpoint.bin").string());
  res.first_window_error = run.first_window_error();
  res.final_error = run.stats().mean();
  res.zero_predictor_error = run.stats().zero_predictor_mean();
  return res;
}

std::vector<std::pair<std::int64_t, double>> read_curve(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(f, line);
  if (line != "step,error,ops,stage") throw FormatError("unexpected curve header in '" + path.string() + "'");
  std::vector<std::pair<std::int64_t, double>> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, error;
    std::getline(ss, step, ',');
    std::getline(ss, error, ',');
    out.emplace_back(std::stoll(step), std::stod(error));
  }
  return out;
}

}  // namespace

std::size_t summarize(const std::string& dir) {
  std::vector<fs::path> seeds;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("seed_", 0) == 0 && fs::exists(entry.path() / "curve.csv") &&
        !fs::exists(entry.path() / "fault.txt"))
      seeds.push_back(entry.path());
  }
  std::sort(seeds.begin(), seeds.end());

  std::map<std::int64_t, std::vector<double>> by_step;
  for (const auto& s : seeds)
    for (const auto& [step, err] : read_curve(s / "curve.csv"))
      if (std::isfinite(err)) by_step[step].push_back(err);

  std::string out = "step,mean,stderr,n\n";
  for (const auto& [step, values] : by_step) {
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double se = 0.0;
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    out += std::to_string(step) + "," + fmt(mean) + "," + fmt(se) + "," + std::to_string(values.size()) + "\n";
  }
  write_text(fs::path(dir) / "summary.csv", out);
  return seeds.size();
}

std::vector<SeedResult> run_experiment(const std::vector<GridPoint>& grid) {
  struct Job {
    std::size_t point;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  int workers = 1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const fs::path dir = point_dir(grid[i]);
    fs::create_directories(dir);
    write_text(dir / "config.txt", to_text(grid[i].config));
    for (auto s : grid[i].config.seeds) jobs.push_back({i, s});
    workers = std::max(workers, effective_workers(grid[i].config));
  }

  std::vector<SeedResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        results[j] = run_one(grid[jobs[j].point], jobs[j].seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(workers), jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  for (const auto& p : grid) summarize(point_dir(p).string());
  return results;
}

std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg) { return run_experiment({{"", cfg}}); }

std::vector<double> normalized_error(const std::vector<double>& errors, double baseline) {
  if (!(baseline > 0.0)) throw UsageError("baseline error must be positive");
  std::vector<double> out;
  out.reserve(errors.size());
  for (double e : errors) out.push_back(e / baseline);
  return out;
}

double mean_normalized_error(const std::vector<double>& method, const std::vector<double>& baseline) {
  if (method.size() != baseline.size() || method.empty()) throw UsageError("need one baseline per task");
  double sum = 0.0;
  for (std::size_t i = 0; i < method.size(); ++i) sum += normalized_error({method[i]}, baseline[i]).front();
  return sum / static_cast<double>(method.size());
}

}  // namespace ccn
