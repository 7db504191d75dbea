// SPDX-License-Identifier: Apache-2.0
#include "ccn/trace_pattern.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace ccn {

void TraceConfig::validate() const {
  if (n_cs < 1 || n_cs > 30) throw UsageError("n_cs must lie in [1,30]");
  if (active_bits < 1 || active_bits > n_cs) throw UsageError("active_bits must lie in [1,n_cs]");
  if (n_noise < 0) throw UsageError("n_noise must be >= 0");
  if (isi_min < 1 || isi_max < isi_min) throw UsageError("bad ISI range");
  if (iti_min < 1 || iti_max < iti_min) throw UsageError("bad ITI range");
  if (!(noise_prob >= 0.0 && noise_prob <= 1.0)) throw UsageError("noise_prob must lie in [0,1]");
}

TracePatternEnv::TracePatternEnv(const TraceConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  for (std::uint32_t mask = 0; mask < (1u << cfg_.n_cs); ++mask)
    if (std::popcount(mask) == cfg_.active_bits) patterns_.push_back(mask);
  if (cfg_.n_positive < 0 || static_cast<std::size_t>(cfg_.n_positive) > patterns_.size())
    throw UsageError("n_positive exceeds the number of patterns");

  std::vector<std::size_t> order(patterns_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Fisher-Yates with our own draws so the choice does not depend on the
  // standard library's shuffle.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng_)]);
  }
  positive_flag_.assign(patterns_.size(), false);
  for (int k = 0; k < cfg_.n_positive; ++k) positive_flag_[order[static_cast<std::size_t>(k)]] = true;
  for (std::size_t i = 0; i < patterns_.size(); ++i)
    if (positive_flag_[i]) positive_.push_back(patterns_[i]);

  next_cs_ = 0;
  begin_trial();
}

bool TracePatternEnv::is_positive(std::uint32_t pattern) const {
  return std::find(positive_.begin(), positive_.end(), pattern) != positive_.end();
}

void TracePatternEnv::begin_trial() {
  std::uniform_int_distribution<std::size_t> pick(0, patterns_.size() - 1);
  std::uniform_int_distribution<int> isi(cfg_.isi_min, cfg_.isi_max);
  std::uniform_int_distribution<int> iti(cfg_.iti_min, cfg_.iti_max);
  pattern_ = pick(rng_);
  cs_at_ = next_cs_;
  us_at_ = cs_at_ + isi(rng_);
  next_cs_ = us_at_ + iti(rng_);
}

StepRecord TracePatternEnv::next() {
  if (t_ == next_cs_) begin_trial();

  StepRecord rec;
  rec.observation = VectorXd::Zero(observation_width());
  if (t_ == cs_at_) {
    const std::uint32_t mask = patterns_[pattern_];
    for (int b = 0; b < cfg_.n_cs; ++b)
      if (mask & (1u << b)) rec.observation[b] = 1.0;
  }
  std::bernoulli_distribution noise(cfg_.noise_prob);
  for (int j = 0; j < cfg_.n_noise; ++j) rec.observation[cfg_.n_cs + j] = noise(rng_) ? 1.0 : 0.0;
  if (t_ == us_at_ && positive_flag_[pattern_]) rec.observation[cumulant_index()] = 1.0;
  rec.cumulant = rec.observation[cumulant_index()];
  ++t_;
  return rec;
}

std::string TracePatternEnv::save_state() const {
  std::ostringstream os;
  os << rng_ << ' ' << t_ << ' ' << cs_at_ << ' ' << us_at_ << ' ' << next_cs_ << ' ' << pattern_;
  return os.str();
}

void TracePatternEnv::load_state(const std::string& s) {
  std::istringstream is(s);
  is >> rng_ >> t_ >> cs_at_ >> us_at_ >> next_cs_ >> pattern_;
  if (!is || pattern_ >= patterns_.size()) throw UsageError("corrupt trace-pattern generator state");
}

std::size_t return_horizon(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("gamma must lie in [0,1)");
  if (gamma == 0.0) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(1e-8) / std::log(gamma)));
}

Returns ground_truth_returns(std::span<const double> cumulants, double gamma) {
  Returns r;
  r.horizon = return_horizon(gamma);
  const std::size_t n = cumulants.size();
  r.values.assign(n, 0.0);
  double g = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    r.values[t] = g;  // G_t = c_{t+1} + gamma G_{t+1}; G_{n-1} = 0
    g = cumulants[t] + gamma * g;
  }
  r.valid = n > r.horizon ? n - r.horizon : 0;
  return r;
}

Returns ground_truth_returns(std::span<const double> cumulants, std::span<const std::uint8_t> terminals,
                             double gamma) {
  if (terminals.size() != cumulants.size()) throw UsageError("terminal flags and cumulants differ in length");
  Returns r;
  r.horizon = return_horizon(gamma);
  const std::size_t n = cumulants.size();
  r.values.assign(n, 0.0);
  std::size_t last_terminal = 0;
  bool any_terminal = false;
  double g = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    if (terminals[t]) {
      r.values[t] = 0.0;
      if (!any_terminal) last_terminal = t;
      any_terminal = true;
    } else {
      r.values[t] = g;
    }
    g = cumulants[t] + gamma * r.values[t];
  }
  r.valid = n > r.horizon ? n - r.horizon : 0;
  if (any_terminal) r.valid = std::max(r.valid, last_terminal + 1);
  return r;
}

}  // namespace ccn
