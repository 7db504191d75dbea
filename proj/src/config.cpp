// SPDX-License-Identifier: Apache-2.0
#include "ccn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ccn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw UsageError("empty element in list '" + v + "'");
    out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty value");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  // Accept scientific shorthand like 1e6 for step counts.
  if (v.find_first_of("eE.") != std::string::npos) {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || d != static_cast<double>(static_cast<std::int64_t>(d)))
      throw UsageError("key '" + key + "' expects an integer, got '" + v + "'");
    return static_cast<std::int64_t>(d);
  }
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::uint64_t> to_seeds(const std::vector<std::string>& items) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : items) {
    const auto dots = item.find("..");
    if (dots != std::string::npos) {
      const auto lo = to_int("seeds", item.substr(0, dots));
      const auto hi = to_int("seeds", item.substr(dots + 2));
      if (lo < 0 || hi < lo) throw UsageError("bad seed range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    } else {
      const auto s = to_int("seeds", item);
      if (s < 0) throw UsageError("seeds must be non-negative");
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  return seeds;
}

const std::set<std::string>& sweep_keys() {
  static const std::set<std::string> keys{"step_size", "norm_eps",       "truncation", "features",
                                          "lambda",    "features_per_stage", "steps_per_stage"};
  return keys;
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void set_scalar(ExperimentConfig& c, const std::string& key, const std::string& v) {
  if (key == "schema_version") {
    if (to_int(key, v) != kConfigSchemaVersion)
      throw UsageError("unsupported config schema_version " + v + " (expected " +
                       std::to_string(kConfigSchemaVersion) + ")");
  } else if (key == "topology") {
    c.topology = parse_topology(v);
  } else if (key == "features") {
    c.features = static_cast<int>(to_int(key, v));
  } else if (key == "features_per_stage") {
    c.features_per_stage = static_cast<int>(to_int(key, v));
  } else if (key == "steps_per_stage") {
    c.steps_per_stage = to_int(key, v);
  } else if (key == "total_stages") {
    c.total_stages = static_cast<int>(to_int(key, v));
  } else if (key == "truncation") {
    c.truncation = to_int(key, v);
  } else if (key == "normalize") {
    if (v == "auto") c.normalize.reset();
    else c.normalize = to_bool(key, v);
  } else if (key == "norm_beta") {
    c.norm_beta = to_real(key, v);
  } else if (key == "norm_eps") {
    c.norm_eps = to_real(key, v);
  } else if (key == "step_size") {
    c.learner.step_size = to_real(key, v);
  } else if (key == "gamma") {
    c.learner.gamma = to_real(key, v);
  } else if (key == "lambda") {
    c.learner.lambda = to_real(key, v);
  } else if (key == "optimizer") {
    c.learner.optimizer = parse_optimizer(v);
  } else if (key == "beta2") {
    c.learner.beta2 = to_real(key, v);
  } else if (key == "opt_eps") {
    c.learner.opt_eps = to_real(key, v);
  } else if (key == "env") {
    if (v == "trace") c.env = EnvKind::TracePatterning;
    else if (v == "replay") c.env = EnvKind::Replay;
    else throw UsageError("env must be 'trace' or 'replay'");
  } else if (key == "replay_path") {
    c.replay_path = v;
  } else if (key == "trace_n_cs") {
    c.trace.n_cs = static_cast<int>(to_int(key, v));
  } else if (key == "trace_active_bits") {
    c.trace.active_bits = static_cast<int>(to_int(key, v));
  } else if (key == "trace_n_positive") {
    c.trace.n_positive = static_cast<int>(to_int(key, v));
  } else if (key == "trace_n_noise") {
    c.trace.n_noise = static_cast<int>(to_int(key, v));
  } else if (key == "trace_isi_min") {
    c.trace.isi_min = static_cast<int>(to_int(key, v));
  } else if (key == "trace_isi_max") {
    c.trace.isi_max = static_cast<int>(to_int(key, v));
  } else if (key == "trace_iti_min") {
    c.trace.iti_min = static_cast<int>(to_int(key, v));
  } else if (key == "trace_iti_max") {
    c.trace.iti_max = static_cast<int>(to_int(key, v));
  } else if (key == "trace_noise_prob") {
    c.trace.noise_prob = to_real(key, v);
  } else if (key == "total_steps") {
    c.total_steps = to_int(key, v);
  } else if (key == "window") {
    c.window = to_int(key, v);
  } else if (key == "cadence") {
    c.cadence = to_int(key, v);
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "workers") {
    c.workers = static_cast<int>(to_int(key, v));
  } else if (key == "checkpoint") {
    c.checkpoint = to_bool(key, v);
  } else {
    throw UsageError("unknown config key '" + key + "'");
  }
}

}  // namespace

std::string to_string(Topology t) {
  switch (t) {
    case Topology::Columnar: return "columnar";
    case Topology::Constructive: return "constructive";
    case Topology::Ccn: return "ccn";
    case Topology::Tbptt: return "tbptt";
  }
  return "unknown";
}

Topology parse_topology(const std::string& s) {
  if (s == "columnar") return Topology::Columnar;
  if (s == "constructive") return Topology::Constructive;
  if (s == "ccn") return Topology::Ccn;
  if (s == "tbptt") return Topology::Tbptt;
  throw UsageError("unknown topology '" + s + "'");
}

std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::Sgd: return "sgd";
    case Optimizer::Adaptive: return "adaptive";
    case Optimizer::AdaptiveUpdate: return "adaptive_update";
  }
  return "unknown";
}

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adaptive") return Optimizer::Adaptive;
  if (s == "adaptive_update") return Optimizer::AdaptiveUpdate;
  throw UsageError("unknown optimizer '" + s + "'");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "schema_version", "topology",        "features",       "features_per_stage", "steps_per_stage",
      "total_stages",   "truncation",      "normalize",      "norm_beta",          "norm_eps",
      "step_size",      "gamma",           "lambda",         "optimizer",          "beta2",
      "opt_eps",        "env",             "replay_path",    "trace_n_cs",         "trace_active_bits",
      "trace_n_positive", "trace_n_noise", "trace_isi_min",  "trace_isi_max",      "trace_iti_min",
      "trace_iti_max",  "trace_noise_prob", "total_steps",   "window",             "cadence",
      "output_dir",     "seeds",           "workers",        "checkpoint"};
  return keys;
}

void ExperimentConfig::validate() const {
  if (features < 1) throw UsageError("features must be >= 1");
  if (features_per_stage < 1) throw UsageError("features_per_stage must be >= 1");
  if (steps_per_stage < 1) throw UsageError("steps_per_stage must be >= 1");
  if (total_stages < 0) throw UsageError("total_stages must be >= 0");
  if (truncation < 1) throw UsageError("truncation must be >= 1");
  if (topology == Topology::Constructive && features_per_stage != 1)
    throw UsageError("constructive networks use features_per_stage = 1");
  if (normalization_enabled()) norm().validate();
  learner.validate();
  if (env == EnvKind::TracePatterning) trace.validate();
  if (env == EnvKind::Replay && replay_path.empty()) throw UsageError("env = replay needs replay_path");
  if (total_steps < 2) throw UsageError("total_steps must be >= 2");
  if (window < 1) throw UsageError("window must be >= 1");
  if (cadence < 1) throw UsageError("cadence must be >= 1");
  if (seeds.empty()) throw UsageError("at least one seed is required");
  if (workers < 1) throw UsageError("workers must be >= 1");
}

int ExperimentConfig::stage_count() const {
  if (topology == Topology::Columnar || topology == Topology::Tbptt) return 1;
  if (total_stages > 0) return total_stages;
  return static_cast<int>(std::max<std::int64_t>(1, (total_steps + steps_per_stage - 1) / steps_per_stage));
}

ConfigTable parse_config_text(const std::string& text) {
  ConfigTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
      throw UsageError("line " + std::to_string(line_no) + ": unknown config key '" + key + "'");
    if (table.count(key)) throw UsageError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    table[key] = split_list(value);
  }
  if (!table.count("schema_version")) throw UsageError("config is missing schema_version");
  return table;
}

ConfigTable load_config_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_overrides(ConfigTable& table, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("override '" + o + "' is not key=value");
    const std::string key = trim(o.substr(0, eq));
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
      throw UsageError("unknown config key '" + key + "'");
    table[key] = split_list(trim(o.substr(eq + 1)));
  }
}

ExperimentConfig config_from_table(const ConfigTable& table) {
  ExperimentConfig c;
  // Topology first: constructive networks default to one feature per stage.
  if (auto it = table.find("topology"); it != table.end()) {
    if (it->second.size() != 1) throw UsageError("topology takes a single value");
    c.topology = parse_topology(it->second.front());
    if (c.topology == Topology::Constructive) c.features_per_stage = 1;
  }
  for (const auto& [key, values] : table) {
    if (key == "seeds") {
      c.seeds = to_seeds(values);
      continue;
    }
    if (values.size() != 1) throw UsageError("key '" + key + "' has several values; use expand_grid");
    set_scalar(c, key, values.front());
  }
  c.validate();
  return c;
}

std::vector<GridPoint> expand_grid(const ConfigTable& table) {
  std::vector<std::string> swept;
  for (const auto& [key, values] : table) {
    if (key == "seeds" || values.size() == 1) continue;
    if (!sweep_keys().count(key)) throw UsageError("key '" + key + "' does not accept a list");
    swept.push_back(key);
  }
  std::vector<GridPoint> out;
  std::vector<std::size_t> pos(swept.size(), 0);
  while (true) {
    ConfigTable single = table;
    std::string label;
    for (std::size_t i = 0; i < swept.size(); ++i) {
      const std::string& v = table.at(swept[i])[pos[i]];
      single[swept[i]] = {v};
      label += (label.empty() ? "" : "_") + swept[i] + "=" + v;
    }
    out.push_back({label, config_from_table(single)});
    std::size_t i = 0;
    for (; i < swept.size(); ++i) {
      if (++pos[i] < table.at(swept[i]).size()) break;
      pos[i] = 0;
    }
    if (i == swept.size()) break;
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text) { return config_from_table(parse_config_text(text)); }

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "schema_version = " << kConfigSchemaVersion << "\n";
  os << "topology = " << to_string(c.topology) << "\n";
  os << "features = " << c.features << "\n";
  os << "features_per_stage = " << c.features_per_stage << "\n";
  os << "steps_per_stage = " << c.steps_per_stage << "\n";
  os << "total_stages = " << c.total_stages << "\n";
  os << "truncation = " << c.truncation << "\n";
  os << "normalize = " << (c.normalize ? (*c.normalize ? "true" : "false") : "auto") << "\n";
  os << "norm_beta = " << fmt_real(c.norm_beta) << "\n";
  os << "norm_eps = " << fmt_real(c.norm_eps) << "\n";
  os << "step_size = " << fmt_real(c.learner.step_size) << "\n";
  os << "gamma = " << fmt_real(c.learner.gamma) << "\n";
  os << "lambda = " << fmt_real(c.learner.lambda) << "\n";
  os << "optimizer = " << to_string(c.learner.optimizer) << "\n";
  os << "beta2 = " << fmt_real(c.learner.beta2) << "\n";
  os << "opt_eps = " << fmt_real(c.learner.opt_eps) << "\n";
  os << "env = " << (c.env == EnvKind::TracePatterning ? "trace" : "replay") << "\n";
  if (!c.replay_path.empty()) os << "replay_path = " << c.replay_path << "\n";
  os << "trace_n_cs = " << c.trace.n_cs << "\n";
  os << "trace_active_bits = " << c.trace.active_bits << "\n";
  os << "trace_n_positive = " << c.trace.n_positive << "\n";
  os << "trace_n_noise = " << c.trace.n_noise << "\n";
  os << "trace_isi_min = " << c.trace.isi_min << "\n";
  os << "trace_isi_max = " << c.trace.isi_max << "\n";
  os << "trace_iti_min = " << c.trace.iti_min << "\n";
  os << "trace_iti_max = " << c.trace.iti_max << "\n";
  os << "trace_noise_prob = " << fmt_real(c.trace.noise_prob) << "\n";
  os << "total_steps = " << c.total_steps << "\n";
  os << "window = " << c.window << "\n";
  os << "cadence = " << c.cadence << "\n";
  os << "output_dir = " << c.output_dir << "\n";
  os << "seeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? "," : "") << c.seeds[i];
  os << "\n";
  os << "workers = " << c.workers << "\n";
  os << "checkpoint = " << (c.checkpoint ? "true" : "false") << "\n";
  return os.str();
}

int effective_workers(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("CCN_WORKERS")) {
    const auto n = to_int("CCN_WORKERS", env);
    if (n < 1) throw UsageError("CCN_WORKERS must be >= 1");
    return static_cast<int>(n);
  }
  return cfg.workers;
}

}  // namespace ccn
