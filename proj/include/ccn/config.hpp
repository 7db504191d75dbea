// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a flat `key = value` text format with an explicit
// schema version. Unknown keys are errors. A handful of hyperparameters accept
// comma-separated lists, which expand into a grid of runs.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccn/feature_norm.hpp"
#include "ccn/td_learner.hpp"
#include "ccn/trace_pattern.hpp"
#include "ccn/types.hpp"

namespace ccn {

inline constexpr int kConfigSchemaVersion = 1;

enum class EnvKind { TracePatterning, Replay };

struct ExperimentConfig {
  Topology topology = Topology::Ccn;

  // Network shape. `features` is the width of a columnar or T-BPTT network.
  int features = 10;
  int features_per_stage = 4;
  std::int64_t steps_per_stage = 250000;
  int total_stages = 0;  // 0: as many stages as fit in total_steps
  std::int64_t truncation = 15;
  std::optional<bool> normalize;  // default: on for staged networks, off for T-BPTT
  double norm_beta = 0.99999;
  double norm_eps = 0.001;

  LearnerConfig learner;

  EnvKind env = EnvKind::TracePatterning;
  TraceConfig trace;
  std::string replay_path;

  std::int64_t total_steps = 1000000;
  std::int64_t window = 10000;
  std::int64_t cadence = 10000;
  std::string output_dir = "results";
  std::vector<std::uint64_t> seeds{0};
  int workers = 1;
  bool checkpoint = true;

  void validate() const;

  bool normalization_enabled() const { return normalize.value_or(topology != Topology::Tbptt); }
  NormConfig norm() const { return {normalization_enabled(), norm_beta, norm_eps}; }
  /// Stage count actually used by staged topologies.
  int stage_count() const;
};

/// Raw key -> list-of-values view of a config file, before grid expansion.
using ConfigTable = std::map<std::string, std::vector<std::string>>;

ConfigTable parse_config_text(const std::string& text);
ConfigTable load_config_table(const std::string& path);
/// Applies `key=value` overrides (values may be lists).
void apply_overrides(ConfigTable& table, const std::vector<std::string>& overrides);

/// Cartesian product over list-valued sweep keys. Each entry carries a short
/// label naming its swept values (empty when nothing is swept).
struct GridPoint {
  std::string label;
  ExperimentConfig config;
};
std::vector<GridPoint> expand_grid(const ConfigTable& table);

/// Single configuration; rejects list values on any key.
ExperimentConfig config_from_table(const ConfigTable& table);
ExperimentConfig parse_config(const std::string& text);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);

/// Keys recognised by the parser, in canonical order.
const std::vector<std::string>& config_keys();

/// Worker count after applying the CCN_WORKERS environment override.
int effective_workers(const ExperimentConfig& cfg);

}  // namespace ccn
