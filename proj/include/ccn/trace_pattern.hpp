// SPDX-License-Identifier: Apache-2.0
//
// Trace-patterning prediction stream. Each trial shows a 3-of-6 CS pattern for
// one step; ISI steps later the US fires if the pattern is one of the positive
// ones, then the next CS follows ITI steps after the US slot. Noise features
// are i.i.d. Bernoulli and carry no information about the US.
//
// Observation layout: [ CS (n_cs) | noise (n_noise) | US ].
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccn/types.hpp"

namespace ccn {

struct StepRecord {
  VectorXd observation;
  double cumulant = 0.0;
  bool terminal = false;
};

struct TraceConfig {
  int n_cs = 6;
  int active_bits = 3;
  int n_positive = 10;
  int n_noise = 5;
  int isi_min = 24;
  int isi_max = 36;
  int iti_min = 80;
  int iti_max = 120;
  double noise_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  Index observation_width() const { return n_cs + n_noise + 1; }
};

class TracePatternEnv {
 public:
  explicit TracePatternEnv(const TraceConfig& cfg);

  StepRecord next();

  const TraceConfig& config() const { return cfg_; }
  Index observation_width() const { return cfg_.observation_width(); }
  Index cumulant_index() const { return cfg_.observation_width() - 1; }
  std::int64_t steps() const { return t_; }

  /// All C(n_cs, active_bits) patterns as bit masks, in enumeration order.
  const std::vector<std::uint32_t>& patterns() const { return patterns_; }
  const std::vector<std::uint32_t>& positive_patterns() const { return positive_; }
  bool is_positive(std::uint32_t pattern) const;

  /// Generator state as text, for checkpoints.
  std::string save_state() const;
  void load_state(const std::string& s);

 private:
  void begin_trial();

  TraceConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::uint32_t> patterns_;
  std::vector<std::uint32_t> positive_;
  std::vector<bool> positive_flag_;  // indexed like patterns_

  std::int64_t t_ = 0;
  std::int64_t cs_at_ = 0;   // step of the current trial's CS
  std::int64_t us_at_ = 0;   // step of the current trial's US slot
  std::int64_t next_cs_ = 0;
  std::size_t pattern_ = 0;
};

/// G_t = c_{t+1} + gamma G_{t+1}, evaluated backwards from the end of the
/// stream. Entries within `horizon` steps of the end lack enough future and are
/// flagged invalid.
struct Returns {
  std::vector<double> values;
  std::size_t valid = 0;  // values[0..valid) are trustworthy
  std::size_t horizon = 0;
};

std::size_t return_horizon(double gamma);
Returns ground_truth_returns(std::span<const double> cumulants, double gamma);

/// Episodic variant: a terminal record has value 0, so returns never look
/// past the end of an episode. Everything up to the last terminal is valid.
Returns ground_truth_returns(std::span<const double> cumulants, std::span<const std::uint8_t> terminals,
                             double gamma);

}  // namespace ccn
