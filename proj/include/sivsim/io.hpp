#pragma once

// File formats: PSTM1 photon streams and CSV tables.
//
// PSTM1 layout, all integers little-endian:
//   "PSTM"  4 bytes
//   0x01    version
//   u64     record count
//   count x { u64 timestamp_ps, u8 channel (0 = A, 1 = B) }

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sivsim/fit.hpp"
#include "sivsim/mc.hpp"

namespace sivsim {

inline constexpr std::size_t kPstmHeaderBytes = 13;
inline constexpr std::size_t kPstmRecordBytes = 9;

void write_pstm(const PhotonStream& stream, const std::string& path);

/// Reads exactly the declared number of records; trailing bytes are ignored.
/// duration_ps is left 0. Throws BadMagic, TruncatedFile or
/// NonMonotoneTimestamps (checked per channel).
PhotonStream read_pstm(const std::string& path);

/// Incremental writer for streams that do not fit in memory. The record count
/// in the header is patched on close().
class PstmWriter {
 public:
  explicit PstmWriter(const std::string& path);
  ~PstmWriter();
  PstmWriter(const PstmWriter&) = delete;
  PstmWriter& operator=(const PstmWriter&) = delete;

  void append(std::span<const PhotonRecord> records);
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::string path_;
  std::uint64_t count_ = 0;
  std::vector<char> buf_;
};

/// Column-named numeric table.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

/// General format, 9 significant digits, locale free.
std::string format_number(double v);

/// Locale-free parse of a full field; throws UnparseableNumber.
double parse_number(const std::string& field, std::size_t row, std::size_t col);

std::string table_to_csv(const Table& t);
void write_table_csv(const Table& t, const std::string& path);

/// The header row must equal `schema` exactly (names, case and order); an
/// empty schema accepts any header. Throws SchemaMismatch or
/// UnparseableNumber (row index counts data rows from 1).
Table read_table_csv(const std::string& path, const std::vector<std::string>& schema = {});

/// Loads x, y and, when the schema has a third column, sigma.
DataSeries read_series_csv(const std::string& path, const std::vector<std::string>& schema);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace sivsim
