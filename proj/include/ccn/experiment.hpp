// SPDX-License-Identifier: Apache-2.0
//
// Online experiment loop: stream -> network -> TD(lambda) -> stage growth ->
// windowed error against the true discounted return. One Run is one seed;
// run_experiment fans a grid of configs and seeds out over worker threads.
//
// Output layout under cfg.output_dir (plus one subdirectory per grid label):
//   config.txt           canonical config text
//   seed_<s>/curve.csv   step,error,ops,stage
//   seed_<s>/checkpoint.bin
//   seed_<s>/fault.txt   only when the seed hit a numeric fault
//   summary.csv          step,mean,stderr,n across non-faulted seeds
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ccn/binary_io.hpp"
#include "ccn/config.hpp"
#include "ccn/types.hpp"

namespace ccn {

/// Mean squared error over the most recent `window` scored steps, alongside
/// the error a constant-zero predictor would have had on the same steps.
class RunStats {
 public:
  explicit RunStats(std::int64_t window = 1);

  void add(double prediction, double target);
  double mean() const;
  double zero_predictor_mean() const;
  std::int64_t window() const { return window_; }
  std::int64_t count() const { return count_; }
  bool full() const { return count_ >= window_; }

  void save(BinaryWriter& out) const;
  void load(BinaryReader& in);

 private:
  std::int64_t window_;
  std::int64_t count_ = 0;
  std::vector<double> errors_;   // ring buffers of length window_
  std::vector<double> targets_;
};

struct CurvePoint {
  std::int64_t step = 0;
  double error = 0.0;
  double ops = 0.0;
  int stage = 0;
};

/// Hooks into the online loop. Tests use it to check that every prediction
/// is scored before the data of its step reaches the learner.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  /// A prediction for step `step` was made; `updates` parameter updates have
  /// been applied so far.
  virtual void on_predict(std::int64_t /*step*/, double /*prediction*/, std::int64_t /*updates*/) {}
  /// The learner finished processing step `step`.
  virtual void on_learn(std::int64_t /*step*/, std::int64_t /*updates*/) {}
};

class Run {
 public:
  Run(const ExperimentConfig& cfg, std::uint64_t seed);
  ~Run();
  Run(Run&&) noexcept;
  Run& operator=(Run&&) noexcept;

  const ExperimentConfig& config() const;
  std::uint64_t seed() const;
  std::int64_t step() const;         // steps consumed so far
  std::int64_t total_steps() const;  // may be less than configured for short replay streams
  bool done() const;
  int stage() const;

  /// Consumes up to n more steps.
  void advance(std::int64_t n, RunObserver* observer = nullptr);
  void run_to_end(RunObserver* observer = nullptr);

  const RunStats& stats() const;
  const std::vector<CurvePoint>& curve() const;
  /// Error of the first full window (NaN until one has been seen).
  double first_window_error() const;
  /// Per-step estimated operation count of the current network shape.
  double ops_per_step() const;
  VectorXd parameters() const;
  /// Ground-truth returns used for scoring.
  const std::vector<double>& returns() const;

  std::string curve_csv() const;

  void save_checkpoint(const std::string& path) const;
  static Run load_checkpoint(const std::string& path);

 private:
  struct Impl;
  explicit Run(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

struct SeedResult {
  std::string label;
  std::uint64_t seed = 0;
  std::string dir;
  bool faulted = false;
  std::string fault;
  double first_window_error = 0.0;
  double final_error = 0.0;
  double zero_predictor_error = 0.0;
};

/// Runs every (grid point, seed) pair and writes curves, checkpoints and
/// per-point summaries. A numeric fault ends only the affected seed.
std::vector<SeedResult> run_experiment(const std::vector<GridPoint>& grid);
std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg);

/// Rebuilds summary.csv in `dir` from its seed_*/curve.csv files and returns
/// the number of curves combined.
std::size_t summarize(const std::string& dir);

/// errors[i] / baseline. The baseline itself maps to exactly 1.
std::vector<double> normalized_error(const std::vector<double>& errors, double baseline);
/// Arithmetic mean over tasks of method[i] / baseline[i].
double mean_normalized_error(const std::vector<double>& method, const std::vector<double>& baseline);

}  // namespace ccn
