// SPDX-License-Identifier: Apache-2.0
#include "ccn/stream_io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <unistd.h>

#include "ccn/binary_io.hpp"

namespace ccn {
namespace {

constexpr char kMagic[8] = {'C', 'C', 'N', 'S', 'T', 'R', 'M', '\0'};

std::string sys_error(const std::string& what, const std::string& path) {
  return what + " '" + path + "': " + std::strerror(errno);
}

void write_all(std::FILE* f, const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw StreamError(StreamErrc::Io, "short write");
}

std::vector<unsigned char> encode_header(const StreamHeader& h) {
  std::vector<unsigned char> buf(h.header_size());
  std::memcpy(buf.data(), kMagic, 8);
  put_le(buf.data() + 8, kStreamVersion, 4);
  put_le(buf.data() + 12, h.flags, 4);
  put_le(buf.data() + 16, h.width, 8);
  put_le(buf.data() + 24, h.count, 8);
  put_le(buf.data() + 32, h.cumulant_index, 8);
  put_le(buf.data() + 40, h.metadata.size(), 8);
  std::memcpy(buf.data() + 48, h.metadata.data(), h.metadata.size());
  return buf;
}

}  // namespace

std::string to_string(StreamErrc e) {
  switch (e) {
    case StreamErrc::Io: return "io";
    case StreamErrc::BadMagic: return "bad-magic";
    case StreamErrc::BadVersion: return "bad-version";
    case StreamErrc::Truncated: return "truncated";
    case StreamErrc::WidthMismatch: return "width-mismatch";
    case StreamErrc::BadHeader: return "bad-header";
  }
  return "unknown";
}

StreamWriter::StreamWriter(const std::string& path, StreamHeader header) : header_(std::move(header)), path_(path) {
  if (header_.width < 1) throw UsageError("stream width must be >= 1");
  if (header_.cumulant_index >= header_.width) throw UsageError("cumulant index outside the observation");
  header_.count = 0;
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw StreamError(StreamErrc::Io, sys_error("cannot create", path));
  const auto buf = encode_header(header_);
  write_all(file_, buf.data(), buf.size());
}

StreamWriter::~StreamWriter() {
  try {
    close();
  } catch (...) {
  }
}

void StreamWriter::write(const StepRecord& rec) {
  if (!file_) throw StreamError(StreamErrc::Io, "stream already closed");
  if (static_cast<std::uint64_t>(rec.observation.size()) != header_.width)
    throw StreamError(StreamErrc::WidthMismatch, "record width does not match stream header");
  std::vector<unsigned char> buf(header_.record_size());
  for (std::uint64_t j = 0; j < header_.width; ++j)
    put_le(buf.data() + 8 * j, std::bit_cast<std::uint64_t>(rec.observation[static_cast<Index>(j)]), 8);
  if (header_.has_terminal()) buf.back() = rec.terminal ? 1 : 0;
  write_all(file_, buf.data(), buf.size());
  ++header_.count;
}

void StreamWriter::close() {
  if (!file_) return;
  std::FILE* f = file_;
  file_ = nullptr;
  unsigned char count[8];
  put_le(count, header_.count, 8);
  bool ok = std::fflush(f) == 0 && std::fseek(f, 24, SEEK_SET) == 0;
  ok = ok && std::fwrite(count, 1, 8, f) == 8 && std::fflush(f) == 0;
  ok = ok && ::fsync(::fileno(f)) == 0;
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) throw StreamError(StreamErrc::Io, sys_error("cannot finalize", path_));
}

StreamReader::StreamReader(const std::string& path) {
  file_ = std::fopen(path.c_str(), "rb");
  if (!file_) throw StreamError(StreamErrc::Io, sys_error("cannot open", path));
  unsigned char fixed[48];
  if (std::fread(fixed, 1, 8, file_) != 8 || std::memcmp(fixed, kMagic, 8) != 0) {
    std::fclose(file_);
    file_ = nullptr;
    throw StreamError(StreamErrc::BadMagic, "'" + path + "' is not a stream file");
  }
  auto fail = [&](StreamErrc code, const std::string& what) {
    std::fclose(file_);
    file_ = nullptr;
    throw StreamError(code, what + " in '" + path + "'");
  };
  if (std::fread(fixed + 8, 1, 40, file_) != 40) fail(StreamErrc::Truncated, "truncated header");
  if (get_le(fixed + 8, 4) != kStreamVersion) fail(StreamErrc::BadVersion, "unsupported stream version");
  header_.flags = static_cast<std::uint32_t>(get_le(fixed + 12, 4));
  header_.width = get_le(fixed + 16, 8);
  header_.count = get_le(fixed + 24, 8);
  header_.cumulant_index = get_le(fixed + 32, 8);
  const std::uint64_t meta_len = get_le(fixed + 40, 8);
  if (header_.width < 1 || header_.width > (1ull << 24) || header_.cumulant_index >= header_.width ||
      meta_len > (1ull << 24))
    fail(StreamErrc::BadHeader, "implausible header fields");
  header_.metadata.resize(meta_len);
  if (std::fread(header_.metadata.data(), 1, meta_len, file_) != meta_len) fail(StreamErrc::Truncated, "truncated metadata");

  if (std::fseek(file_, 0, SEEK_END) != 0) fail(StreamErrc::Io, "cannot seek");
  const long end = std::ftell(file_);
  const std::uint64_t need = header_.header_size() + header_.count * header_.record_size();
  if (end < 0 || static_cast<std::uint64_t>(end) < need) fail(StreamErrc::Truncated, "file shorter than its record count");
  seek(0);
}

StreamReader::~StreamReader() {
  if (file_) std::fclose(file_);
}

void StreamReader::expect_width(std::uint64_t width) const {
  if (header_.width != width)
    throw StreamError(StreamErrc::WidthMismatch, "stream width " + std::to_string(header_.width) + ", expected " +
                                                     std::to_string(width));
}

void StreamReader::seek(std::uint64_t index) {
  if (index > header_.count) throw UsageError("seek past end of stream");
  const std::uint64_t off = header_.header_size() + index * header_.record_size();
  if (std::fseek(file_, static_cast<long>(off), SEEK_SET) != 0) throw StreamError(StreamErrc::Io, "cannot seek");
  cursor_ = index;
}

StepRecord StreamReader::decode(const unsigned char* buf) const {
  StepRecord rec;
  rec.observation.resize(static_cast<Index>(header_.width));
  for (std::uint64_t j = 0; j < header_.width; ++j)
    rec.observation[static_cast<Index>(j)] = std::bit_cast<double>(get_le(buf + 8 * j, 8));
  rec.cumulant = rec.observation[static_cast<Index>(header_.cumulant_index)];
  rec.terminal = header_.has_terminal() && buf[header_.record_size() - 1] != 0;
  return rec;
}

std::optional<StepRecord> StreamReader::next() {
  if (cursor_ >= header_.count) return std::nullopt;
  std::vector<unsigned char> buf(header_.record_size());
  if (std::fread(buf.data(), 1, buf.size(), file_) != buf.size())
    throw StreamError(StreamErrc::Truncated, "truncated record " + std::to_string(cursor_));
  ++cursor_;
  return decode(buf.data());
}

StepRecord StreamReader::read(std::uint64_t index) {
  if (index >= header_.count) throw UsageError("record index out of range");
  seek(index);
  return *next();
}

void write_stream(const std::string& path, const StreamHeader& header, const std::vector<StepRecord>& records) {
  StreamWriter w(path, header);
  for (const auto& r : records) w.write(r);
  w.close();
}

std::vector<StepRecord> read_stream(const std::string& path) {
  StreamReader r(path);
  std::vector<StepRecord> out;
  out.reserve(r.size());
  while (auto rec = r.next()) out.push_back(std::move(*rec));
  return out;
}

std::uint64_t import_csv(const std::string& csv_path, const std::string& out_path, const CsvImportOptions& opts) {
  std::ifstream in(csv_path);
  if (!in) throw StreamError(StreamErrc::Io, "cannot open '" + csv_path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw UsageError("non-numeric CSV cell on line " + std::to_string(line_no));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw StreamError(StreamErrc::WidthMismatch, "ragged CSV row on line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw UsageError("CSV file has no data rows");

  StreamHeader h;
  h.width = rows.front().size() - (opts.terminal_column ? 1 : 0);
  if (h.width < 1) throw UsageError("CSV rows have no observation columns");
  h.cumulant_index = opts.cumulant_index.value_or(h.width - 1);
  if (h.cumulant_index >= h.width) throw UsageError("cumulant index outside the observation");
  h.flags = (opts.terminal_column ? kFlagTerminal : 0) | (opts.clip_cumulant ? kFlagClipped : 0);
  h.metadata = opts.metadata;

  StreamWriter w(out_path, h);
  for (const auto& row : rows) {
    StepRecord rec;
    rec.observation = Eigen::Map<const VectorXd>(row.data(), static_cast<Index>(h.width));
    double& c = rec.observation[static_cast<Index>(h.cumulant_index)];
    if (opts.clip_cumulant) c = std::clamp(c, -1.0, 1.0);
    rec.cumulant = c;
    rec.terminal = opts.terminal_column && row.back() != 0.0;
    w.write(rec);
  }
  w.close();
  return rows.size();
}

}  // namespace ccn
