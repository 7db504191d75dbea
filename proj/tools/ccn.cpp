// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: run experiments, verify gradients, dump and inspect
// streams, size T-BPTT baselines, rebuild summaries.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccn/compute.hpp"
#include "ccn/config.hpp"
#include "ccn/experiment.hpp"
#include "ccn/grad_oracle.hpp"
#include "ccn/stream_io.hpp"
#include "ccn/trace_pattern.hpp"

namespace {

int cmd_run(const std::string& path, const std::vector<std::string>& overrides) {
  ccn::ConfigTable table = ccn::load_config_table(path);
  ccn::apply_overrides(table, overrides);
  const auto grid = ccn::expand_grid(table);
  const auto results = ccn::run_experiment(grid);
  int faults = 0;
  for (const auto& r : results) {
    std::printf("%s seed %llu: first-window %.6g final %.6g zero-predictor %.6g%s\n",
                r.label.empty() ? "run" : r.label.c_str(), static_cast<unsigned long long>(r.seed),
                r.first_window_error, r.final_error, r.zero_predictor_error, r.faulted ? " FAULT" : "");
    if (r.faulted) {
      std::fprintf(stderr, "  %s\n", r.fault.c_str());
      ++faults;
    }
  }
  return faults == 0 ? 0 : 3;
}

int cmd_verify(const std::vector<std::string>& topologies, int instances, std::size_t steps, std::uint64_t seed,
               double tol_abs, double tol_rel) {
  bool ok = true;
  std::printf("%-13s %9s %14s %14s %14s\n", "topology", "instances", "max|fwd-bptt|", "max rel fd", "max|fd-bptt|");
  for (const auto& name : topologies) {
    const auto check = ccn::oracle::verify_gradients(ccn::parse_topology(name), instances, steps, seed);
    const bool pass = check.max_abs_bptt <= tol_abs && check.max_rel_fd <= tol_rel;
    ok = ok && pass;
    std::printf("%-13s %9d %14.3e %14.3e %14.3e %s\n", name.c_str(), check.instances, check.max_abs_bptt,
                check.max_rel_fd, check.max_abs_fd, pass ? "ok" : "MISMATCH");
  }
  return ok ? 0 : 1;
}

int cmd_dump_env(const std::string& out, std::int64_t steps, std::uint64_t seed) {
  ccn::TraceConfig cfg;
  cfg.seed = seed;
  ccn::TracePatternEnv env(cfg);
  ccn::StreamHeader h;
  h.width = static_cast<std::uint64_t>(env.observation_width());
  h.cumulant_index = static_cast<std::uint64_t>(env.cumulant_index());
  h.metadata = "trace-patterning seed=" + std::to_string(seed);
  ccn::StreamWriter w(out, h);
  for (std::int64_t t = 0; t < steps; ++t) w.write(env.next());
  w.close();
  std::printf("wrote %lld records of width %llu to %s\n", static_cast<long long>(steps),
              static_cast<unsigned long long>(h.width), out.c_str());
  return 0;
}

int cmd_inspect(const std::string& path, std::uint64_t head) {
  ccn::StreamReader r(path);
  const auto& h = r.header();
  std::printf("records        %llu\n", static_cast<unsigned long long>(h.count));
  std::printf("width          %llu\n", static_cast<unsigned long long>(h.width));
  std::printf("cumulant index %llu\n", static_cast<unsigned long long>(h.cumulant_index));
  std::printf("terminal flags %s\n", h.has_terminal() ? "yes" : "no");
  std::printf("clipped        %s\n", (h.flags & ccn::kFlagClipped) ? "yes" : "no");
  std::printf("metadata       %s\n", h.metadata.c_str());
  double sum = 0.0;
  std::uint64_t terminals = 0;
  for (std::uint64_t i = 0; i < h.count; ++i) {
    const auto rec = *r.next();
    sum += rec.cumulant;
    terminals += rec.terminal ? 1 : 0;
    if (i < head) {
      std::printf("%6llu |", static_cast<unsigned long long>(i));
      for (ccn::Index j = 0; j < rec.observation.size(); ++j) std::printf(" %g", rec.observation[j]);
      std::printf(rec.terminal ? " | terminal\n" : "\n");
    }
  }
  std::printf("cumulant sum   %g\n", sum);
  std::printf("terminals      %llu\n", static_cast<unsigned long long>(terminals));
  return 0;
}

int cmd_budget(std::int64_t budget, std::int64_t inputs, double tolerance, std::int64_t max_k, bool measure) {
  std::printf("T-BPTT pairs within %lld ops (+%.0f%%), %lld inputs\n", static_cast<long long>(budget), 100 * tolerance,
              static_cast<long long>(inputs));
  std::printf("%5s %6s %8s\n", "k", "d", "ops");
  for (const auto& p : ccn::budget_pairs(budget, inputs, tolerance, max_k))
    std::printf("%5lld %6lld %8lld\n", static_cast<long long>(p.truncation), static_cast<long long>(p.hidden),
                static_cast<long long>(p.ops));
  if (!measure) return 0;
  const ccn::ComputeShape shapes[] = {
      {ccn::Topology::Columnar, 10, inputs, 1, 1},
      {ccn::Topology::Constructive, 5, inputs, 1, 1},
      {ccn::Topology::Ccn, 16, inputs, 4, 1},
      {ccn::Topology::Tbptt, 4, inputs, 1, 15},
  };
  std::printf("\n%-13s %9s %10s %10s %10s %8s\n", "topology", "estimate", "measured", "forward", "learning", "ratio");
  for (const auto& s : shapes) {
    const auto m = ccn::measure_ops(s);
    const auto e = static_cast<double>(ccn::estimate_ops(s));
    std::printf("%-13s %9.0f %10.1f %10.1f %10.1f %8.3f\n", ccn::to_string(s.topology).c_str(), e, m.total, m.forward,
                m.learning, m.total / e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online recurrent learning with columnar and constructive LSTM networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run an experiment config (extra key=value arguments override it)");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("overrides", overrides, "key=value overrides");

  std::vector<std::string> topologies{"columnar", "ccn", "constructive", "tbptt"};
  int instances = 50;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  double tol_abs = 1e-10, tol_rel = 1e-5;
  auto* verify = app.add_subcommand("verify-gradients", "Compare online gradients with BPTT and finite differences");
  verify->add_option("--topology", topologies, "Topologies to check");
  verify->add_option("--instances", instances, "Random instances per topology");
  verify->add_option("--steps", steps, "Stream length");
  verify->add_option("--seed", seed, "Seed");
  verify->add_option("--tol-abs", tol_abs, "Allowed |online - BPTT|");
  verify->add_option("--tol-rel", tol_rel, "Allowed relative finite-difference error");

  std::string out_path;
  std::int64_t dump_steps = 100000;
  auto* dump = app.add_subcommand("dump-env", "Write a trace-patterning stream to a stream file");
  dump->add_option("out", out_path, "Output stream file")->required();
  dump->add_option("--steps", dump_steps, "Number of records");
  dump->add_option("--seed", seed, "Environment seed");

  std::string stream_path;
  std::uint64_t head = 10;
  auto* inspect = app.add_subcommand("inspect-stream", "Print a stream file's header and first records");
  inspect->add_option("stream", stream_path, "Stream file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--head", head, "Records to print");

  std::int64_t budget = 4000, inputs = 12, max_k = 30;
  double tolerance = 0.1;
  bool measure = false;
  auto* est = app.add_subcommand("estimate-budget", "List T-BPTT (k, d) pairs that fit a per-step budget");
  est->add_option("--budget", budget, "Operations per step");
  est->add_option("--inputs", inputs, "Observation width");
  est->add_option("--tolerance", tolerance, "Allowed overshoot as a fraction");
  est->add_option("--max-truncation", max_k, "Largest truncation considered");
  est->add_flag("--measure", measure, "Also count operations of the default networks");

  std::string dir;
  auto* summary = app.add_subcommand("summarize", "Rebuild summary.csv from seed curves");
  summary->add_option("dir", dir, "Directory holding seed_* subdirectories")->required()->check(CLI::ExistingDirectory);

  std::string csv_path;
  ccn::CsvImportOptions csv_opts;
  std::uint64_t cumulant_index = 0;
  auto* import = app.add_subcommand("import-csv", "Convert a numeric CSV into a stream file");
  import->add_option("csv", csv_path, "Input CSV")->required()->check(CLI::ExistingFile);
  import->add_option("out", out_path, "Output stream file")->required();
  auto* ci = import->add_option("--cumulant-index", cumulant_index, "Observation index of the cumulant (default last)");
  import->add_flag("--terminal-column", csv_opts.terminal_column, "Last CSV column is a terminal flag");
  import->add_flag("--clip", csv_opts.clip_cumulant, "Clip the cumulant to [-1, 1]");
  import->add_option("--metadata", csv_opts.metadata, "Metadata string");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, overrides);
    if (*verify) return cmd_verify(topologies, instances, steps, seed, tol_abs, tol_rel);
    if (*dump) return cmd_dump_env(out_path, dump_steps, seed);
    if (*inspect) return cmd_inspect(stream_path, head);
    if (*est) return cmd_budget(budget, inputs, tolerance, max_k, measure);
    if (*summary) {
      std::printf("combined %zu curves into %s/summary.csv\n", ccn::summarize(dir), dir.c_str());
      return 0;
    }
    if (*import) {
      if (*ci) csv_opts.cumulant_index = cumulant_index;
      std::printf("wrote %llu records to %s\n",
                  static_cast<unsigned long long>(ccn::import_csv(csv_path, out_path, csv_opts)), out_path.c_str());
      return 0;
    }
  } catch (const ccn::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
