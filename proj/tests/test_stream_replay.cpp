// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "ccn/experiment.hpp"
#include "ccn/stream_io.hpp"
#include "ccn/trace_pattern.hpp"
#include "test_util.hpp"

using namespace ccn;

namespace {

std::vector<StepRecord> random_records(std::mt19937_64& rng, std::size_t n, Index width, bool terminals) {
  std::vector<StepRecord> out;
  std::bernoulli_distribution coin(0.1);
  for (std::size_t t = 0; t < n; ++t) {
    StepRecord r;
    r.observation = test::normal_vector(rng, width, 100.0);
    r.cumulant = r.observation[width - 1];
    r.terminal = terminals && coin(rng);
    out.push_back(std::move(r));
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

StreamErrc error_code(const std::string& path) {
  try {
    StreamReader r(path);
    while (r.next()) {
    }
  } catch (const StreamError& e) {
    return e.code();
  }
  FAIL("expected a stream error");
  return StreamErrc::Io;
}

}  // namespace

TEST_CASE("round trip is lossless and byte-stable") {
  test::TempDir dir("rt");
  std::mt19937_64 rng(1);
  for (bool terminals : {false, true}) {
    StreamHeader h;
    h.width = 5;
    h.cumulant_index = 4;
    h.flags = terminals ? kFlagTerminal : 0;
    h.metadata = "unit test";
    auto recs = random_records(rng, 50, 5, terminals);
    recs[3].observation[0] = std::numeric_limits<double>::denorm_min();
    recs[4].observation[1] = -0.0;
    recs[5].observation[2] = std::numeric_limits<double>::max();
    write_stream(dir.file("a.bin"), h, recs);
    const auto back = read_stream(dir.file("a.bin"));
    REQUIRE(back.size() == recs.size());
    for (std::size_t t = 0; t < recs.size(); ++t) {
      CHECK(std::memcmp(back[t].observation.data(), recs[t].observation.data(), 5 * sizeof(double)) == 0);
      CHECK(back[t].terminal == recs[t].terminal);
      CHECK(back[t].cumulant == recs[t].observation[4]);
    }
    write_stream(dir.file("b.bin"), h, back);
    CHECK(slurp(dir.file("a.bin")) == slurp(dir.file("b.bin")));
    StreamReader r(dir.file("a.bin"));
    CHECK(r.header().metadata == "unit test");
    CHECK(r.header().has_terminal() == terminals);
  }
}

TEST_CASE("file size is header plus fixed-size records") {
  test::TempDir dir("size");
  std::mt19937_64 rng(2);
  StreamHeader h;
  h.width = 3;
  h.cumulant_index = 2;
  h.metadata = "abc";
  write_stream(dir.file("s.bin"), h, random_records(rng, 3, 3, false));
  CHECK(std::filesystem::file_size(dir.file("s.bin")) == 48 + 3 + 3 * 3 * 8);
  h.flags = kFlagTerminal;
  write_stream(dir.file("t.bin"), h, random_records(rng, 3, 3, true));
  CHECK(std::filesystem::file_size(dir.file("t.bin")) == 48 + 3 + 3 * (3 * 8 + 1));
}

TEST_CASE("empty stream") {
  test::TempDir dir("empty");
  StreamHeader h;
  h.width = 2;
  write_stream(dir.file("e.bin"), h, {});
  StreamReader r(dir.file("e.bin"));
  CHECK(r.size() == 0);
  CHECK_FALSE(r.next().has_value());
  CHECK(read_stream(dir.file("e.bin")).empty());
}

TEST_CASE("random access by step index") {
  test::TempDir dir("seek");
  std::mt19937_64 rng(3);
  StreamHeader h;
  h.width = 4;
  h.cumulant_index = 1;
  const auto recs = random_records(rng, 20, 4, false);
  write_stream(dir.file("s.bin"), h, recs);
  StreamReader r(dir.file("s.bin"));
  for (std::uint64_t i : {7u, 0u, 19u, 3u}) {
    const auto rec = r.read(i);
    CHECK(rec.observation == recs[i].observation);
    CHECK(rec.cumulant == recs[i].observation[1]);
    CHECK(r.position() == i + 1);
  }
  CHECK_THROWS_AS(r.read(20), UsageError);
  r.seek(20);
  CHECK_FALSE(r.next().has_value());
}

TEST_CASE("distinct error codes") {
  test::TempDir dir("err");
  std::mt19937_64 rng(4);
  StreamHeader h;
  h.width = 3;
  h.cumulant_index = 2;
  write_stream(dir.file("good.bin"), h, random_records(rng, 4, 3, false));
  const std::string good = slurp(dir.file("good.bin"));

  auto write_bytes = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir.file(name), std::ios::binary) << bytes;
    return dir.file(name);
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(error_code(write_bytes("magic.bin", bad_magic)) == StreamErrc::BadMagic);
  std::string bad_version = good;
  bad_version[8] = 9;
  CHECK(error_code(write_bytes("version.bin", bad_version)) == StreamErrc::BadVersion);
  CHECK(error_code(write_bytes("short.bin", good.substr(0, good.size() - 5))) == StreamErrc::Truncated);
  CHECK(error_code(write_bytes("header.bin", good.substr(0, 20))) == StreamErrc::Truncated);
  std::string bad_index = good;
  bad_index[32] = 7;
  CHECK(error_code(write_bytes("index.bin", bad_index)) == StreamErrc::BadHeader);
  CHECK(error_code(dir.file("missing.bin")) == StreamErrc::Io);

  StreamReader r(dir.file("good.bin"));
  CHECK_THROWS_AS(r.expect_width(4), StreamError);
  try {
    r.expect_width(4);
  } catch (const StreamError& e) {
    CHECK(e.code() == StreamErrc::WidthMismatch);
  }
  StreamWriter w(dir.file("w.bin"), h);
  StepRecord wrong;
  wrong.observation = VectorXd::Zero(2);
  CHECK_THROWS_AS(w.write(wrong), StreamError);
  CHECK(to_string(StreamErrc::Truncated) == "truncated");
}

TEST_CASE("writer contract") {
  test::TempDir dir("wc");
  StreamHeader h;
  h.width = 0;
  CHECK_THROWS_AS(StreamWriter(dir.file("a.bin"), h), UsageError);
  h.width = 2;
  h.cumulant_index = 2;
  CHECK_THROWS_AS(StreamWriter(dir.file("a.bin"), h), UsageError);
  h.cumulant_index = 0;
  StreamWriter w(dir.file("a.bin"), h);
  w.close();
  StepRecord r;
  r.observation = VectorXd::Zero(2);
  CHECK_THROWS_AS(w.write(r), StreamError);
}

TEST_CASE("CSV import with terminal column and clipping") {
  test::TempDir dir("csv");
  {
    std::ofstream csv(dir.file("in.csv"));
    csv << "# obs0,obs1,reward,terminal\n"
        << "0.5,1,3.5,0\n"
        << "1,2,-0.25,0\n"
        << "\n"
        << "2,3,-9,1\n";
  }
  CsvImportOptions opts;
  opts.terminal_column = true;
  opts.clip_cumulant = true;
  opts.metadata = "csv";
  CHECK(import_csv(dir.file("in.csv"), dir.file("out.bin"), opts) == 3);
  StreamReader r(dir.file("out.bin"));
  CHECK(r.header().width == 3);
  CHECK(r.header().cumulant_index == 2);
  CHECK((r.header().flags & kFlagClipped) != 0);
  const auto recs = read_stream(dir.file("out.bin"));
  CHECK(recs[0].cumulant == 1.0);
  CHECK(recs[1].cumulant == -0.25);
  CHECK(recs[2].cumulant == -1.0);
  CHECK(recs[2].observation[2] == -1.0);
  CHECK_FALSE(recs[0].terminal);
  CHECK(recs[2].terminal);

  {
    std::ofstream csv(dir.file("ragged.csv"));
    csv << "1,2\n3\n";
  }
  CHECK_THROWS_AS(import_csv(dir.file("ragged.csv"), dir.file("x.bin"), {}), StreamError);
  {
    std::ofstream csv(dir.file("text.csv"));
    csv << "1,abc\n";
  }
  CHECK_THROWS_AS(import_csv(dir.file("text.csv"), dir.file("x.bin"), {}), UsageError);
}

TEST_CASE("a dumped trace stream replays to the same trajectory as live generation") {
  test::TempDir dir("replay");
  const std::uint64_t seed = 4;
  const std::int64_t steps = 3000;

  TraceConfig tc;
  tc.seed = seed;
  TracePatternEnv env(tc);
  StreamHeader h;
  h.width = static_cast<std::uint64_t>(env.observation_width());
  h.cumulant_index = static_cast<std::uint64_t>(env.cumulant_index());
  {
    StreamWriter w(dir.file("trace.bin"), h);
    for (std::int64_t t = 0; t < steps; ++t) w.write(env.next());
  }

  ExperimentConfig live;
  live.topology = Topology::Ccn;
  live.steps_per_stage = 1000;
  live.total_steps = steps;
  live.window = 100;
  live.cadence = 500;
  live.checkpoint = false;
  ExperimentConfig replay = live;
  replay.env = EnvKind::Replay;
  replay.replay_path = dir.file("trace.bin");

  Run a(live, seed), b(replay, seed);
  a.run_to_end();
  b.run_to_end();
  CHECK(b.step() == steps);
  CHECK(test::max_abs_diff(a.parameters(), b.parameters()) <= 1e-12);
}
