// SPDX-License-Identifier: Apache-2.0
//
// Fixed-size-record binary streams of observations.
//
//   offset  size  field
//   0       8     magic "CCNSTRM\0"
//   8       4     format version (1)
//   12      4     flags (bit 0: records carry a terminal byte, bit 1: cumulant clipped)
//   16      8     observation width
//   24      8     record count
//   32      8     cumulant index
//   40      8     metadata length L
//   48      L     metadata (UTF-8)
//   48+L    ...   records: width little-endian f64 values [+ 1 terminal byte]
//
// All integers little-endian. Record i starts at header_size + i * record_size.
#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>

#include "ccn/trace_pattern.hpp"
#include "ccn/types.hpp"

namespace ccn {

enum class StreamErrc { Io, BadMagic, BadVersion, Truncated, WidthMismatch, BadHeader };

std::string to_string(StreamErrc e);

class StreamError : public std::runtime_error {
 public:
  StreamError(StreamErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  StreamErrc code() const { return code_; }

 private:
  StreamErrc code_;
};

inline constexpr std::uint32_t kStreamVersion = 1;
inline constexpr std::uint32_t kFlagTerminal = 1u << 0;
inline constexpr std::uint32_t kFlagClipped = 1u << 1;

struct StreamHeader {
  std::uint64_t width = 0;
  std::uint64_t count = 0;
  std::uint64_t cumulant_index = 0;
  std::uint32_t flags = 0;
  std::string metadata;

  bool has_terminal() const { return (flags & kFlagTerminal) != 0; }
  std::uint64_t header_size() const { return 48 + metadata.size(); }
  std::uint64_t record_size() const { return width * 8 + (has_terminal() ? 1 : 0); }
};

/// Writes records as they arrive; the count field is patched on close.
class StreamWriter {
 public:
  StreamWriter(const std::string& path, StreamHeader header);
  ~StreamWriter();
  StreamWriter(const StreamWriter&) = delete;
  StreamWriter& operator=(const StreamWriter&) = delete;

  void write(const StepRecord& rec);
  /// Flushes, patches the record count and syncs to disk.
  void close();
  std::uint64_t count() const { return header_.count; }

 private:
  std::FILE* file_ = nullptr;
  StreamHeader header_;
  std::string path_;
};

class StreamReader {
 public:
  explicit StreamReader(const std::string& path);
  ~StreamReader();
  StreamReader(const StreamReader&) = delete;
  StreamReader& operator=(const StreamReader&) = delete;

  const StreamHeader& header() const { return header_; }
  std::uint64_t size() const { return header_.count; }
  std::uint64_t position() const { return cursor_; }

  /// Random access by step index.
  StepRecord read(std::uint64_t index);
  /// Sequential access; empty once the stream is exhausted.
  std::optional<StepRecord> next();
  void seek(std::uint64_t index);
  /// Throws WidthMismatch unless the stream has the expected width.
  void expect_width(std::uint64_t width) const;

 private:
  StepRecord decode(const unsigned char* buf) const;

  std::FILE* file_ = nullptr;
  StreamHeader header_;
  std::uint64_t cursor_ = 0;
};

void write_stream(const std::string& path, const StreamHeader& header, const std::vector<StepRecord>& records);
std::vector<StepRecord> read_stream(const std::string& path);

struct CsvImportOptions {
  std::optional<std::uint64_t> cumulant_index;  // default: last observation column
  bool terminal_column = false;                 // last CSV column is a 0/1 terminal flag
  bool clip_cumulant = false;                   // clip the cumulant entry to [-1, 1]
  std::string metadata;
};

/// Converts a headerless numeric CSV (one step per row) into a binary stream.
/// Returns the number of records written.
std::uint64_t import_csv(const std::string& csv_path, const std::string& out_path, const CsvImportOptions& opts);

}  // namespace ccn
