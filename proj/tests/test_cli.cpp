#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sivsim/cli.hpp"
#include "sivsim/config.hpp"
#include "sivsim/io.hpp"

using namespace sivsim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sivsim_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sivsim");
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// Every stderr line must be one JSON object.
void check_error_json(const Run& r, int expected_code) {
  CHECK(r.code == expected_code);
  std::istringstream lines(r.err);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("error"));
    CHECK(j.contains("message"));
    CHECK(j.at("exit_code") == expected_code);
    ++n;
  }
  CHECK(n >= 1);
}

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> v;
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir)) v.push_back(e.path());
  std::sort(v.begin(), v.end());
  return v;
}

fs::path only_file(const fs::path& dir, const std::string& suffix) {
  fs::path found;
  int n = 0;
  for (const auto& p : files_in(dir))
    if (p.filename().string().ends_with(suffix) && p.filename() != "manifest.json") {
      found = p;
      ++n;
    }
  REQUIRE(n == 1);
  return found;
}

json load_json(const fs::path& p) { return json::parse(read_text_file(p.string())); }

std::string fixture(const char* name) { return std::string(SIVSIM_DATA_DIR) + "/" + name; }

}  // namespace

TEST_CASE("unknown subcommand exits 2 and writes nothing") {
  const auto dir = scratch_dir("unknown") / "out";
  const Run r = run({"frobnicate", "--out", dir.string()});
  check_error_json(r, kExitConfig);
  CHECK(!fs::exists(dir));
}

TEST_CASE("usage errors exit 2") {
  const auto dir = scratch_dir("usage") / "out";
  check_error_json(run({}), kExitConfig);
  check_error_json(run({"simulate", "--format", "xml", "--out", dir.string()}), kExitConfig);
  check_error_json(run({"simulate", "--seed", "abc", "--out", dir.string()}), kExitConfig);
  check_error_json(run({"simulate", "--bogus"}), kExitConfig);
  CHECK(!fs::exists(dir));
}

TEST_CASE("config errors exit 2") {
  const auto base = scratch_dir("config");
  write_text_file((base / "bad.json").string(), R"({"rates": {"k21": 1, "typo": 3}})");
  check_error_json(run({"simulate", "--config", (base / "bad.json").string(), "--out",
                        (base / "o1").string()}),
                   kExitConfig);
  CHECK(!fs::exists(base / "o1"));
  check_error_json(run({"simulate", "--config", (base / "missing.json").string()}), kExitConfig);
  check_error_json(run({"fit-sat", "--out", (base / "o2").string()}), kExitConfig);
  check_error_json(run({"simulate", "--input", "x.csv", "--out", (base / "o3").string()}),
                   kExitConfig);
}

TEST_CASE("g2 on two independent Poisson streams is flat at 1") {
  const auto dir = scratch_dir("g2");
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> gap(2e5 * 1e-12);  // 200 kcps per channel, in 1/ps
  PhotonStream s;
  for (auto ch : {DetectorChannel::kA, DetectorChannel::kB}) {
    double t = 0;
    while ((t += gap(rng)) < 5e12) s.records.push_back({static_cast<std::uint64_t>(t), ch});
  }
  std::sort(s.records.begin(), s.records.end(),
            [](const PhotonRecord& a, const PhotonRecord& b) { return a.t_ps < b.t_ps; });
  write_pstm(s, (dir / "poisson.pstm").string());

  const Run r = run({"g2", "--input", (dir / "poisson.pstm").string(), "--out", (dir / "out").string()});
  REQUIRE(r.code == kExitOk);
  const Table t = read_table_csv(only_file(dir / "out", ".csv").string(), {"tau_ns", "g2", "error"});
  REQUIRE(t.rows.size() > 100);
  int outliers = 0;
  double mean = 0;
  for (const auto& row : t.rows) {
    mean += row[1];
    if (std::abs(row[1] - 1) > 4 * row[2]) ++outliers;
  }
  mean /= static_cast<double>(t.rows.size());
  CHECK(mean == doctest::Approx(1).epsilon(0.01));
  CHECK(outliers <= 2);
}

TEST_CASE("fit-sat on the bundled RE fixture reports P_sat near 8.9 mW") {
  const auto dir = scratch_dir("fitsat");
  const Run r = run({"fit-sat", "--input", fixture("saturation_re.csv"), "--out", (dir / "out").string()});
  REQUIRE(r.code == kExitOk);
  const json rep = load_json(only_file(dir / "out", ".json"));
  CHECK(rep.at("converged") == true);
  double p_sat = 0, p_err = 0;
  for (const auto& p : rep.at("parameters"))
    if (p.at("name") == "p_sat") {
      p_sat = p.at("estimate");
      p_err = p.at("stderr");
    }
  MESSAGE("P_sat = " << p_sat << " +- " << p_err);
  CHECK(p_sat == doctest::Approx(8.9).epsilon(0.1));
  CHECK(p_err > 0);
}

TEST_CASE("fit that hits its iteration cap exits 4") {
  const auto dir = scratch_dir("notconv");
  write_text_file((dir / "c.json").string(), R"({"fit_sat": {"max_iter": 1}})");
  const Run r = run({"fit-sat", "--config", (dir / "c.json").string(), "--input",
                     fixture("saturation_re.csv"), "--out", (dir / "out").string()});
  check_error_json(r, kExitNotConverged);
  // The report and the manifest are still written.
  CHECK(load_json(only_file(dir / "out", ".json")).at("converged") == false);
  CHECK(load_json(dir / "out" / "manifest.json").at("exit_code") == kExitNotConverged);
}

TEST_CASE("corrupted magic exits 3") {
  const auto dir = scratch_dir("magic");
  write_text_file((dir / "bad.pstm").string(), std::string("PSTX\x01", 5) + std::string(8, '\0'));
  const Run r = run({"g2", "--input", (dir / "bad.pstm").string(), "--out", (dir / "out").string()});
  check_error_json(r, kExitRuntime);
  CHECK(json::parse(r.err).at("error") == "BadMagic");
}

TEST_CASE("manifest records the resolved run") {
  const auto dir = scratch_dir("manifest");
  const Run r = run({"nn-dist", "--seed", "17", "--out", (dir / "out").string()});
  REQUIRE(r.code == kExitOk);
  const json m = load_json(dir / "out" / "manifest.json");
  CHECK(m.at("tool_version") == kToolVersion);
  CHECK(m.at("command") == "nn-dist");
  CHECK(m.at("seed") == 17);
  CHECK(m.at("config").at("seed") == 17);
  CHECK(!m.at("config").at("timestamp").get<std::string>().empty());
  CHECK(m.at("outputs").size() >= 1);
  for (const auto& name : m.at("outputs")) CHECK(fs::exists(dir / "out" / name.get<std::string>()));
}

TEST_CASE("reruns from the manifest are byte-identical") {
  const auto dir = scratch_dir("rerun");
  write_text_file((dir / "c.json").string(),
                  R"({"simulate": {"duration_s": 0.2}, "ensemble": {"n_emitters": 3},
                      "trace": {"n_cycles": 2, "segment_s": 0.2},
                      "lifetime": {"wavelengths_nm": [550, 600, 640], "n_photons": 100000}})");
  for (const std::string cmd : {"simulate", "trace", "sweep-ge", "sweep-conc", "nn-dist", "lifetime"}) {
    CAPTURE(cmd);
    const fs::path a = dir / (cmd + "_a"), b = dir / (cmd + "_b");
    REQUIRE(run({cmd, "--config", (dir / "c.json").string(), "--seed", "99", "--out", a.string()}).code ==
            kExitOk);
    REQUIRE(run({cmd, "--config", (a / "manifest.json").string(), "--out", b.string()}).code == kExitOk);
    const auto fa = files_in(a), fb = files_in(b);
    REQUIRE(fa.size() == fb.size());
    for (std::size_t i = 0; i < fa.size(); ++i) {
      CHECK(fa[i].filename() == fb[i].filename());
      if (fa[i].filename() == "manifest.json") {
        // Only the output directory differs.
        json ma = load_json(fa[i]), mb = load_json(fb[i]);
        ma["config"].erase("output_dir");
        mb["config"].erase("output_dir");
        CHECK(ma == mb);
      } else {
        CHECK(read_text_file(fa[i].string()) == read_text_file(fb[i].string()));
      }
    }
  }
}

TEST_CASE("json format puts the table inside the report") {
  const auto dir = scratch_dir("jsonfmt");
  REQUIRE(run({"sweep-conc", "--format", "json", "--out", (dir / "out").string()}).code == kExitOk);
  for (const auto& p : files_in(dir / "out")) CHECK(p.extension() == ".json");
  bool found = false;
  for (const auto& p : files_in(dir / "out"))
    if (p.filename() != "manifest.json" && load_json(p).contains("table")) {
      const json t = load_json(p).at("table");
      CHECK(t.at("columns").at(0) == "ppm");
      CHECK(t.at("rows").size() == 41);
      found = true;
    }
  CHECK(found);
}

TEST_CASE("simulate stream writes a readable PSTM1 file") {
  const auto dir = scratch_dir("stream");
  write_text_file((dir / "c.json").string(), R"({"simulate": {"duration_s": 0.1}})");
  REQUIRE(run({"simulate", "--config", (dir / "c.json").string(), "--out", (dir / "out").string()}).code ==
          kExitOk);
  const PhotonStream s = read_pstm(only_file(dir / "out", ".pstm").string());
  const json summary = load_json(only_file(dir / "out", ".json"));
  CHECK(summary.at("records") == s.records.size());
  CHECK(s.records.size() > 100);
}

TEST_CASE("fit-g2 and fit-decay read their own schemas") {
  const auto dir = scratch_dir("fits");
  Table g{{"tau_ns", "g2", "error"}, {}};
  for (int i = -100; i <= 100; ++i) {
    const double tau = i * 1.0, at = std::abs(tau);
    g.rows.push_back({tau, 1 - 1.6 * std::exp(-at / 2.0) + 0.6 * std::exp(-at / 40.0), 0.01});
  }
  write_table_csv(g, (dir / "g2.csv").string());
  const Run rg = run({"fit-g2", "--input", (dir / "g2.csv").string(), "--out", (dir / "og").string()});
  REQUIRE(rg.code == kExitOk);
  CHECK(load_json(only_file(dir / "og", ".json")).at("converged") == true);

  Table d{{"t_ns", "counts"}, {}};
  for (int i = 0; i < 500; ++i) d.rows.push_back({i * 0.05, std::round(1e4 * std::exp(-i * 0.05 / 1.7))});
  write_table_csv(d, (dir / "decay.csv").string());
  const Run rd = run({"fit-decay", "--input", (dir / "decay.csv").string(), "--out", (dir / "od").string()});
  REQUIRE(rd.code == kExitOk);

  write_text_file((dir / "wrong.csv").string(), "Tau_ns,g2,error\n0,1,1\n1,1,1\n");
  check_error_json(run({"fit-g2", "--input", (dir / "wrong.csv").string(), "--out", (dir / "ow").string()}),
                   kExitRuntime);
}

TEST_CASE("help and version exit 0") {
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"--version"}).out.find(kToolVersion) != std::string::npos);
  CHECK(run({"g2", "--help"}).code == kExitOk);
}
