#include "sivsim/io.hpp"

#include <charconv>
#include <cstring>
#include <sstream>

namespace sivsim {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'T', 'M'};
constexpr std::uint8_t kVersion = 0x01;

void put_u64(char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::kIo, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

void write_pstm(const PhotonStream& stream, const std::string& path) {
  PstmWriter w(path);
  w.append(stream.records);
  w.close();
}

PstmWriter::PstmWriter(const std::string& path) : out_(open_out(path)), path_(path) {
  char header[kPstmHeaderBytes];
  std::memcpy(header, kMagic, 4);
  header[4] = static_cast<char>(kVersion);
  put_u64(header + 5, 0);
  out_.write(header, sizeof header);
}

PstmWriter::~PstmWriter() {
  try {
    close();
  } catch (...) {
  }
}

void PstmWriter::append(std::span<const PhotonRecord> records) {
  require(out_.is_open(), Errc::kIo, "PSTM writer already closed");
  buf_.resize(records.size() * kPstmRecordBytes);
  char* p = buf_.data();
  for (const auto& r : records) {
    put_u64(p, r.t_ps);
    p[8] = static_cast<char>(r.channel);
    p += kPstmRecordBytes;
  }
  out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  count_ += records.size();
}

void PstmWriter::close() {
  if (!out_.is_open()) return;
  char n[8];
  put_u64(n, count_);
  out_.seekp(5);
  out_.write(n, 8);
  out_.close();
  require(!out_.fail(), Errc::kIo, "write to '" + path_ + "' failed");
}

PhotonStream read_pstm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::kIo, "cannot open '" + path + "'");
  unsigned char header[kPstmHeaderBytes];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4)
    require(std::memcmp(header, kMagic, 4) == 0, Errc::kBadMagic, "'" + path + "' is not a PSTM file");
  require(got == kPstmHeaderBytes, Errc::kTruncatedFile, "'" + path + "' ends inside the header");
  require(header[4] == kVersion, Errc::kBadMagic,
          "unsupported PSTM version " + std::to_string(header[4]));
  const std::uint64_t count = get_u64(header + 5);

  PhotonStream s;
  std::uint64_t last[2] = {0, 0};
  constexpr std::uint64_t kBlock = 1 << 16;
  std::vector<unsigned char> buf(kBlock * kPstmRecordBytes);
  std::uint64_t done = 0;
  while (done < count) {
    const std::uint64_t n = std::min(kBlock, count - done);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * kPstmRecordBytes));
    require(static_cast<std::uint64_t>(in.gcount()) == n * kPstmRecordBytes, Errc::kTruncatedFile,
            "'" + path + "' declares " + std::to_string(count) + " records but holds fewer");
    if (done == 0) s.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 26)));
    for (std::uint64_t i = 0; i < n; ++i) {
      const unsigned char* p = buf.data() + i * kPstmRecordBytes;
      const std::uint64_t t = get_u64(p);
      const std::uint8_t ch = p[8];
      require(ch <= 1, Errc::kBadMagic, "record " + std::to_string(done + i) + " has channel byte " +
                                            std::to_string(ch));
      require(t >= last[ch], Errc::kNonMonotoneTimestamps,
              "timestamps decrease on channel " + std::to_string(ch) + " at record " +
                  std::to_string(done + i));
      last[ch] = t;
      s.records.push_back({t, static_cast<DetectorChannel>(ch)});
    }
    done += n;
  }
  return s;
}

// CSV -----------------------------------------------------------------------

std::string format_number(double v) {
  require(std::isfinite(v), Errc::kInvalidArgument, "cannot serialize a non-finite number");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& field, std::size_t row, std::size_t col) {
  std::size_t b = 0, e = field.size();
  while (b < e && (field[b] == ' ' || field[b] == '\t')) ++b;
  while (e > b && (field[e - 1] == ' ' || field[e - 1] == '\t' || field[e - 1] == '\r')) --e;
  const char* first = field.data() + b;
  if (b < e && *first == '+') ++first;
  double v = 0;
  auto res = std::from_chars(first, field.data() + e, v);
  require(b < e && res.ec == std::errc() && res.ptr == field.data() + e, Errc::kUnparseableNumber,
          "row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
              ": cannot parse '" + field + "'");
  return v;
}

std::string table_to_csv(const Table& t) {
  std::string s;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    if (c) s += ',';
    s += t.columns[c];
  }
  s += '\n';
  for (const auto& row : t.rows) {
    require(row.size() == t.columns.size(), Errc::kInvalidArgument, "row width differs from header");
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) s += ',';
      s += format_number(row[c]);
    }
    s += '\n';
  }
  return s;
}

void write_text_file(const std::string& path, const std::string& content) {
  auto out = open_out(path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  require(!out.fail(), Errc::kIo, "write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_table_csv(const Table& t, const std::string& path) {
  write_text_file(path, table_to_csv(t));
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Table read_table_csv(const std::string& path, const std::vector<std::string>& schema) {
  std::istringstream in(read_text_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::kSchemaMismatch,
          "'" + path + "' has no header row");
  Table t;
  t.columns = split_fields(line);
  if (!schema.empty()) {
    std::string want, got;
    for (const auto& s : schema) want += (want.empty() ? "" : ",") + s;
    for (const auto& s : t.columns) got += (got.empty() ? "" : ",") + s;
    require(t.columns == schema, Errc::kSchemaMismatch,
            "'" + path + "' header is '" + got + "', expected '" + want + "'");
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto fields = split_fields(line);
    require(fields.size() == t.columns.size(), Errc::kSchemaMismatch,
            "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                " fields, header has " + std::to_string(t.columns.size()));
    std::vector<double> vals;
    for (std::size_t c = 0; c < fields.size(); ++c) vals.push_back(parse_number(fields[c], row, c));
    t.rows.push_back(std::move(vals));
  }
  return t;
}

DataSeries read_series_csv(const std::string& path, const std::vector<std::string>& schema) {
  require(schema.size() == 2 || schema.size() == 3, Errc::kInvalidArgument,
          "series schema needs x, y and optional sigma");
  const Table t = read_table_csv(path, schema);
  DataSeries d;
  for (const auto& r : t.rows) {
    d.x.push_back(r[0]);
    d.y.push_back(r[1]);
    if (schema.size() == 3) d.sigma.push_back(r[2]);
  }
  return d;
}

}  // namespace sivsim
