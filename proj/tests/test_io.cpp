#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string_view>

#include "sivsim/config.hpp"
#include "sivsim/error.hpp"
#include "sivsim/io.hpp"

using namespace sivsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sivsim_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

std::size_t content_hash(const fs::path& p) {
  const std::string s = slurp(p);
  return std::hash<std::string_view>{}(s);
}

Errc error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::kInvalidArgument;
}

PhotonStream random_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> gap(0, 1'000'000);
  std::bernoulli_distribution coin(0.5);
  PhotonStream s;
  s.records.reserve(n);
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += gap(rng);
    s.records.push_back({t, coin(rng) ? DetectorChannel::kB : DetectorChannel::kA});
  }
  return s;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string le64(std::uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string header(std::uint64_t n) { return std::string("PSTM\x01", 5) + le64(n); }

std::string record(std::uint64_t t, int ch) { return le64(t) + std::string(1, static_cast<char>(ch)); }

}  // namespace

TEST_CASE("empty stream is a 13-byte file") {
  const auto dir = scratch_dir("empty");
  write_pstm(PhotonStream{}, (dir / "e.pstm").string());
  CHECK(fs::file_size(dir / "e.pstm") == kPstmHeaderBytes);
  CHECK(slurp(dir / "e.pstm") == header(0));
  CHECK(read_pstm((dir / "e.pstm").string()).records.empty());
}

TEST_CASE("header and record layout are little-endian") {
  const auto dir = scratch_dir("layout");
  PhotonStream s;
  s.records = {{0x0102030405060708ULL, DetectorChannel::kB}, {0x1122334455667788ULL, DetectorChannel::kA}};
  write_pstm(s, (dir / "l.pstm").string());
  CHECK(slurp(dir / "l.pstm") ==
        header(2) + record(0x0102030405060708ULL, 1) + record(0x1122334455667788ULL, 0));
}

TEST_CASE("10^6-record round trip is byte-identical") {
  const auto dir = scratch_dir("roundtrip");
  const PhotonStream s = random_stream(1'000'000, 7);
  write_pstm(s, (dir / "a.pstm").string());
  CHECK(fs::file_size(dir / "a.pstm") == kPstmHeaderBytes + 1'000'000 * kPstmRecordBytes);
  const PhotonStream back = read_pstm((dir / "a.pstm").string());
  CHECK(back.records == s.records);
  write_pstm(back, (dir / "b.pstm").string());
  CHECK(content_hash(dir / "a.pstm") == content_hash(dir / "b.pstm"));
  CHECK(slurp(dir / "a.pstm") == slurp(dir / "b.pstm"));
}

TEST_CASE("incremental writer matches the one-shot writer") {
  const auto dir = scratch_dir("writer");
  const PhotonStream s = random_stream(10'000, 3);
  write_pstm(s, (dir / "a.pstm").string());
  {
    PstmWriter w((dir / "b.pstm").string());
    const std::span<const PhotonRecord> all(s.records);
    for (std::size_t i = 0; i < all.size(); i += 777)
      w.append(all.subspan(i, std::min<std::size_t>(777, all.size() - i)));
    w.close();
    CHECK(w.count() == s.records.size());
  }
  CHECK(slurp(dir / "a.pstm") == slurp(dir / "b.pstm"));
}

TEST_CASE("PSTM read errors") {
  const auto dir = scratch_dir("errors");
  const std::string f = (dir / "x.pstm").string();

  write_bytes(f, std::string("PSTN\x01", 5) + le64(0));
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kBadMagic);

  write_bytes(f, std::string("PSTM\x02", 5) + le64(0));
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kBadMagic);

  write_bytes(f, "PST");
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kTruncatedFile);

  write_bytes(f, header(3) + record(1, 0) + record(2, 1));
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kTruncatedFile);

  write_bytes(f, header(2) + record(1, 0) + record(2, 1).substr(0, 5));
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kTruncatedFile);

  write_bytes(f, header(3) + record(10, 0) + record(5, 1) + record(9, 0));
  CHECK(error_code_of([&] { read_pstm(f); }) == Errc::kNonMonotoneTimestamps);

  write_bytes(f, header(1) + record(10, 2));
  CHECK_THROWS_AS(read_pstm(f), Error);

  CHECK(error_code_of([&] { read_pstm((dir / "missing.pstm").string()); }) == Errc::kIo);
}

TEST_CASE("interleaved channels only need per-channel order") {
  const auto dir = scratch_dir("interleave");
  const std::string f = (dir / "x.pstm").string();
  write_bytes(f, header(4) + record(10, 0) + record(5, 1) + record(12, 0) + record(5, 1));
  const auto s = read_pstm(f);
  REQUIRE(s.records.size() == 4);
  CHECK(s.count(DetectorChannel::kA) == 2);
  CHECK(s.count(DetectorChannel::kB) == 2);
}

TEST_CASE("parsing stops at the declared record count") {
  const auto dir = scratch_dir("trailing");
  const std::string f = (dir / "x.pstm").string();
  // Trailing bytes are garbage that would fail every check if read.
  write_bytes(f, header(2) + record(1, 0) + record(2, 1) + "PSTNgarbage\xff\xff");
  const auto s = read_pstm(f);
  REQUIRE(s.records.size() == 2);
  CHECK(s.records[1].t_ps == 2);
}

TEST_CASE("number formatting") {
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(123456789.4) == "123456789");
  CHECK(format_number(1.0 / 3) == "0.333333333");
  CHECK(format_number(-2.5e-12) == "-2.5e-12");
  CHECK(parse_number("1.5e3", 1, 0) == 1500.0);
  CHECK(parse_number(" 2.25", 1, 0) == 2.25);
  CHECK(error_code_of([] { parse_number("1,5", 4, 1); }) == Errc::kUnparseableNumber);
  CHECK(error_code_of([] { parse_number("", 4, 1); }) == Errc::kUnparseableNumber);
  CHECK(error_code_of([] { parse_number("3x", 4, 1); }) == Errc::kUnparseableNumber);
}

TEST_CASE("CSV round trip keeps 9 significant digits") {
  const auto dir = scratch_dir("csv");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mant(-1, 1);
  std::uniform_int_distribution<int> expo(-20, 20);
  Table t{{"a", "b", "c"}, {}};
  for (int i = 0; i < 500; ++i)
    t.rows.push_back({mant(rng) * std::pow(10.0, expo(rng)), mant(rng), static_cast<double>(i)});
  const std::string f = (dir / "t.csv").string();
  write_table_csv(t, f);
  const Table back = read_table_csv(f, {"a", "b", "c"});
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = t.rows[i][j];
      CHECK(std::abs(back.rows[i][j] - v) <= 5.0000001e-9 * std::abs(v));
    }
  // Written twice, the text is a fixed point.
  write_table_csv(back, (dir / "u.csv").string());
  CHECK(slurp(f) == slurp(dir / "u.csv"));
}

TEST_CASE("CSV schema and parse errors") {
  const auto dir = scratch_dir("csv_err");
  const std::string f = (dir / "t.csv").string();
  write_text_file(f, "power_mw,counts_kcps\n1,2\n2,3\n");
  CHECK(read_series_csv(f, {"power_mw", "counts_kcps"}).size() == 2);
  CHECK(error_code_of([&] { read_series_csv(f, {"Power_mW", "counts_kcps"}); }) ==
        Errc::kSchemaMismatch);
  CHECK(error_code_of([&] { read_series_csv(f, {"counts_kcps", "power_mw"}); }) ==
        Errc::kSchemaMismatch);
  CHECK(error_code_of([&] { read_series_csv(f, {"power_mw", "counts_kcps", "sigma"}); }) ==
        Errc::kSchemaMismatch);

  write_text_file(f, "power_mw,counts_kcps\n1,2\n2,abc\n");
  try {
    read_series_csv(f, {"power_mw", "counts_kcps"});
    FAIL("expected UnparseableNumber");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kUnparseableNumber);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  write_text_file(f, "power_mw,counts_kcps\n1,2,3\n");
  CHECK(error_code_of([&] { read_series_csv(f, {"power_mw", "counts_kcps"}); }) ==
        Errc::kSchemaMismatch);
}

TEST_CASE("CSV with CRLF line ends and a sigma column") {
  const auto dir = scratch_dir("csv_crlf");
  const std::string f = (dir / "t.csv").string();
  write_text_file(f, "x,y,s\r\n1,2,0.5\r\n3,4,0.25\r\n");
  const auto d = read_series_csv(f, {"x", "y", "s"});
  REQUIRE(d.size() == 2);
  CHECK(d.y[1] == 4.0);
  REQUIRE(d.sigma.size() == 2);
  CHECK(d.sigma[1] == 0.25);
}

TEST_CASE("bundled saturation fixtures load with their schema") {
  for (const char* name : {"saturation_re.csv", "saturation_ge.csv"}) {
    const auto d = read_series_csv(std::string(SIVSIM_DATA_DIR) + "/" + name, {"power_mw", "counts_kcps"});
    CHECK(d.size() == 40);
    CHECK(d.sigma.empty());
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d.x[i] > d.x[i - 1]);
  }
}

TEST_CASE("config defaults round trip") {
  const RunConfig c = config_from_json(nlohmann::json::object());
  const auto j = config_to_json(c);
  CHECK(config_to_json(config_from_json(j)) == j);
  CHECK(c.rates.k21 == doctest::Approx(default_rates().k21));
  CHECK(c.seed == 1);
}

TEST_CASE("config overrides are applied and survive a round trip") {
  const auto j = nlohmann::json::parse(R"({
    "rates": {"k21": 0.7},
    "detection": {"efficiency": 0.01, "dead_time_ps": 1000},
    "ensemble": {"n_emitters": 12, "method": "per_transition"},
    "excitation": {"p_re": 4, "p_ge": 0.1},
    "simulate": {"schedule": [{"duration_s": 0.5, "p_re": 1, "p_ge": 0}]},
    "calibrate": {"targets": {"ge_re_ratio": null}},
    "seed": 42
  })");
  const RunConfig c = config_from_json(j);
  CHECK(c.rates.k21 == 0.7);
  CHECK(c.detection.efficiency == 0.01);
  CHECK(c.n_emitters == 12);
  CHECK(c.method == SimulationMethod::kPerTransition);
  CHECK(c.excitation.p_ge == 0.1);
  REQUIRE(c.simulate.schedule.segments.size() == 1);
  CHECK(!c.calibrate.targets.ge_re_ratio.has_value());
  CHECK(c.seed == 42);
  const auto again = config_from_json(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));
}

TEST_CASE("config errors") {
  auto code = [](const char* text) {
    return error_code_of([&] { config_from_json(nlohmann::json::parse(text)); });
  };
  CHECK(code(R"({"bogus": 1})") == Errc::kConfig);
  CHECK(code(R"({"rates": {"k21": 1, "k99": 2}})") == Errc::kConfig);
  CHECK(code(R"({"calibrate": {"targets": {"weights": {"nope": 1}}}})") == Errc::kConfig);
  CHECK(code(R"({"simulate": {"schedule": [{"duration_s": 1, "extra": 0}]}})") == Errc::kConfig);
  CHECK(code(R"({"rates": {"k21": "fast"}})") == Errc::kConfig);
  CHECK(code(R"({"seed": -1})") == Errc::kConfig);
  CHECK(code(R"({"rates": {"k21": -1}})") == Errc::kConfig);
  CHECK(code(R"({"detection": {"efficiency": 1.5}})") == Errc::kConfig);
  CHECK(code(R"({"ensemble": {"method": "euler"}})") == Errc::kConfig);
  CHECK(code(R"({"format": "xml"})") == Errc::kConfig);
  CHECK(code(R"({"calibrate": {"free": ["k21", "nonsense"]}})") == Errc::kConfig);
  CHECK(code(R"([1, 2])") == Errc::kConfig);
}

TEST_CASE("config files and manifests load") {
  const auto dir = scratch_dir("config");
  write_text_file((dir / "c.json").string(), R"({"seed": 9})");
  CHECK(load_config_file((dir / "c.json").string()).seed == 9);

  RunConfig c;
  c.seed = 77;
  const nlohmann::json manifest{{"tool_version", kToolVersion},
                                {"command", "simulate"},
                                {"seed", 77},
                                {"config", config_to_json(c)},
                                {"outputs", nlohmann::json::array()},
                                {"exit_code", 0}};
  write_text_file((dir / "manifest.json").string(), manifest.dump(2));
  CHECK(load_config_file((dir / "manifest.json").string()).seed == 77);

  write_text_file((dir / "bad.json").string(), "{ not json");
  CHECK(error_code_of([&] { load_config_file((dir / "bad.json").string()); }) == Errc::kConfig);
  CHECK(error_code_of([&] { load_config_file((dir / "none.json").string()); }) == Errc::kConfig);
}
