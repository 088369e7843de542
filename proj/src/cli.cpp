#include "sivsim/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sivsim/config.hpp"
#include "sivsim/correlation.hpp"
#include "sivsim/donors.hpp"
#include "sivsim/io.hpp"
#include "sivsim/random.hpp"

namespace sivsim {

using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  std::string format;
  std::string input;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

// Collects output files of one run and writes them under a common stem.
class Outputs {
 public:
  Outputs(const RunConfig& cfg, const std::string& command)
      : dir_(cfg.output_dir), stem_(command + "_" + cfg.timestamp), json_(cfg.format == "json") {}

  std::string path(const std::string& suffix) {
    const std::string name = stem_ + suffix;
    names_.push_back(name);
    return (std::filesystem::path(dir_) / name).string();
  }

  void write_json(const json& j, const std::string& suffix = ".json") {
    write_text_file(path(suffix), j.dump(2) + "\n");
  }

  // Main table plus summary: CSV + JSON, or both inside one JSON file.
  void write_table(const Table& t, const json& summary) {
    if (json_) {
      json j = summary;
      j["table"] = {{"columns", t.columns}, {"rows", t.rows}};
      write_json(j);
    } else {
      write_table_csv(t, path(".csv"));
      write_json(summary);
    }
  }

  void write_extra_table(const Table& t, const std::string& tag) {
    if (json_) {
      write_json({{"columns", t.columns}, {"rows", t.rows}}, "_" + tag + ".json");
    } else {
      write_table_csv(t, path("_" + tag + ".csv"));
    }
  }

  const std::vector<std::string>& names() const { return names_; }

 private:
  std::string dir_;
  std::string stem_;
  bool json_;
  std::vector<std::string> names_;
};

json fit_json(const FitResult& f, const std::vector<std::string>& names) {
  json params = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    params.push_back({{"name", names[i]}, {"estimate", f.params[k]}, {"stderr", f.stderr_[k]}});
  }
  return {{"parameters", params},
          {"chi2", f.chi2},
          {"dof", f.dof},
          {"chi2_per_dof", f.dof > 0 ? f.chi2 / f.dof : 0.0},
          {"n_iter", f.n_iter},
          {"converged", f.converged},
          {"status", to_string(f.status)}};
}

std::string require_input(const std::string& input, const std::string& section) {
  require(!input.empty(), Errc::kConfig, "no input file: set " + section + ".input or pass --input");
  return input;
}

ExcitationSchedule simulate_schedule_of(const RunConfig& cfg) {
  if (!cfg.simulate.schedule.segments.empty()) return cfg.simulate.schedule;
  return ExcitationSchedule{{{cfg.simulate.duration_s, cfg.excitation}}};
}

int cmd_simulate(const RunConfig& cfg, Outputs& out) {
  const auto rates = cfg.effective_rates();
  const ExcitationSchedule schedule = simulate_schedule_of(cfg);
  SimulationOptions opt;
  opt.method = cfg.method;
  json summary = {{"command", "simulate"},
                  {"output", cfg.simulate.output},
                  {"duration_s", schedule.total_duration_s()},
                  {"n_emitters", cfg.n_emitters},
                  {"expected_records",
                   expected_record_count(cfg.n_emitters, rates, cfg.detection, schedule)}};
  if (cfg.simulate.output == "stream") {
    PstmWriter w(out.path(".pstm"));
    std::uint64_t n[2] = {0, 0};
    simulate_schedule(
        cfg.n_emitters, rates, cfg.detection, schedule, cfg.seed,
        [&](std::span<const PhotonRecord> chunk) {
          for (const auto& r : chunk) ++n[static_cast<int>(r.channel)];
          w.append(chunk);
        },
        opt);
    w.close();
    summary["records"] = w.count();
    summary["count_a"] = n[0];
    summary["count_b"] = n[1];
    out.write_json(summary);
    return kExitOk;
  }
  EmitterEnsemble ens{cfg.n_emitters, rates, schedule.segments.front().exc};
  const TimeTrace tr =
      simulate_time_trace(ens, cfg.detection, schedule, cfg.simulate.bin_width_ms, cfg.seed, opt);
  Table t{{"time_ms", "counts", "segment"}, {}};
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < tr.counts.size(); ++i) {
    t.rows.push_back({static_cast<double>(i) * tr.bin_width_ms, static_cast<double>(tr.counts[i]),
                      static_cast<double>(tr.segment[i])});
    total += tr.counts[i];
  }
  summary["records"] = total;
  summary["bin_width_ms"] = tr.bin_width_ms;
  out.write_table(t, summary);
  return kExitOk;
}

int cmd_g2(const RunConfig& cfg, Outputs& out) {
  const PhotonStream s = read_pstm(require_input(cfg.g2.input, "g2"));
  const G2Histogram h = estimate_g2(s, cfg.g2.bin_width_ns, cfg.g2.max_tau_ns);
  Table t{{"tau_ns", "g2", "error"}, {}};
  for (std::size_t i = 0; i < h.values.size(); ++i)
    t.rows.push_back({h.taus_ns[i], h.values[i], h.errors[i]});
  json summary = {{"command", "g2"},
                  {"input", cfg.g2.input},
                  {"records", s.records.size()},
                  {"acquisition_time_s", h.acquisition_time_s},
                  {"rate_a", h.rate_a},
                  {"rate_b", h.rate_b},
                  {"bin_width_ns", h.bin_width_ns}};
  out.write_table(t, summary);
  return kExitOk;
}

int cmd_fit_sat(const RunConfig& cfg, Outputs& out) {
  const DataSeries d =
      read_series_csv(require_input(cfg.fit_sat.input, "fit_sat"), cfg.fit_sat.columns);
  const SaturationFit f = fit_saturation(d, std::nullopt, cfg.fit_sat.max_iter);
  json report = {{"command", "fit-sat"},
                 {"input", cfg.fit_sat.input},
                 {"model", "I = P*I_inf/(P + P_sat) + k*P"},
                 {"poor_conditioning", f.poor_conditioning}};
  report.update(fit_json(f.fit, {"i_inf", "p_sat", "k"}));
  out.write_json(report);
  return f.fit.converged ? kExitOk : kExitNotConverged;
}

G2Histogram histogram_from_table(const Table& t) {
  G2Histogram h;
  require(t.rows.size() >= 2, Errc::kInvalidArgument, "g2 table needs at least two rows");
  for (const auto& r : t.rows) {
    h.taus_ns.push_back(r[0]);
    h.values.push_back(r[1]);
    h.errors.push_back(r[2]);
    h.raw_coincidences.push_back(0);
  }
  h.bin_width_ns = std::abs(h.taus_ns[1] - h.taus_ns[0]);
  return h;
}

int cmd_fit_g2(const RunConfig& cfg, Outputs& out) {
  const Table t = read_table_csv(require_input(cfg.fit_g2.input, "fit_g2"), {"tau_ns", "g2", "error"});
  const G2Histogram h = histogram_from_table(t);
  const bool full = cfg.fit_g2.form == "full";
  G2FitOptions opt;
  opt.contrast = cfg.fit_g2.contrast;
  opt.min_abs_tau_ns = cfg.fit_g2.min_abs_tau_ns;
  const G2Fit f = fit_g2(h, full ? G2Form::kFull : G2Form::kBunchingOnly, opt);
  std::vector<std::string> names =
      full ? std::vector<std::string>{"a", "tau1_ns", "tau2_ns"} : std::vector<std::string>{"a", "tau2_ns"};
  if (full && opt.contrast) names.push_back("contrast");
  json report = {{"command", "fit-g2"},
                 {"input", cfg.fit_g2.input},
                 {"form", cfg.fit_g2.form},
                 {"g2_zero", f.g2_zero}};
  if (full && opt.contrast) report["n_equivalent"] = 1.0 / f.contrast;
  report.update(fit_json(f.fit, names));
  out.write_json(report);
  return f.fit.converged ? kExitOk : kExitNotConverged;
}

int cmd_fit_decay(const RunConfig& cfg, Outputs& out) {
  const DataSeries d =
      read_series_csv(require_input(cfg.fit_decay.input, "fit_decay"), cfg.fit_decay.columns);
  require(d.size() >= 2, Errc::kWindowTooShort, "decay table needs more rows");
  DecayHistogram h;
  h.bin_width_ps = (d.x[1] - d.x[0]) * 1e3;
  require(h.bin_width_ps > 0, Errc::kInvalidArgument, "decay times must increase");
  h.irf_sigma_ps = cfg.fit_decay.irf_sigma_ps;
  for (std::size_t i = 0; i < d.size(); ++i) {
    require(d.y[i] >= 0 && std::floor(d.y[i]) == d.y[i], Errc::kInvalidArgument,
            "decay counts must be non-negative integers");
    const double expect = d.x[0] + static_cast<double>(i) * h.bin_width_ps * 1e-3;
    require(std::abs(d.x[i] - expect) <= 1e-6 * std::max(1.0, std::abs(expect)),
            Errc::kInvalidArgument, "decay bins must be evenly spaced");
    h.counts.push_back(static_cast<std::uint64_t>(d.y[i]));
  }
  // Bin centers are recomputed from index, so shift the window by the offset.
  const double offset = d.x[0] - h.bin_center_ns(0);
  DecayFit f;
  if (cfg.fit_decay.t_start_ns < 0 && cfg.fit_decay.t_end_ns < 0) {
    f = fit_decay(h);
  } else {
    const double start = cfg.fit_decay.t_start_ns >= 0 ? cfg.fit_decay.t_start_ns - offset : 0.0;
    const double end = cfg.fit_decay.t_end_ns >= 0 ? cfg.fit_decay.t_end_ns - offset
                                                   : h.bin_center_ns(h.counts.size() - 1);
    f = fit_decay(h, {start, end});
  }
  json report = {{"command", "fit-decay"},
                 {"input", cfg.fit_decay.input},
                 {"model", "A*exp(-(t - t_start)/tau) + floor"},
                 {"t_start_ns", f.window.t_start_ns + offset},
                 {"t_end_ns", f.window.t_end_ns + offset}};
  report.update(fit_json(f.fit, {"tau_ns", "amplitude", "floor"}));
  out.write_json(report);
  return f.fit.converged ? kExitOk : kExitNotConverged;
}

int cmd_sweep_ge(const RunConfig& cfg, Outputs& out) {
  GeSweepSpec spec;
  spec.p_re_levels = cfg.sweep_ge.p_re_levels;
  spec.p_ge_grid = cfg.sweep_ge.p_ge_grid;
  spec.mode = cfg.sweep_ge.mode == "monte_carlo" ? SweepMode::kMonteCarlo : SweepMode::kAnalytic;
  spec.time_per_point_s = cfg.sweep_ge.time_per_point_s;
  spec.n_emitters = cfg.n_emitters;
  const auto levels = run_ge_power_sweep(cfg.effective_rates(), spec, cfg.detection, cfg.seed);
  Table t{{"p_re_mw", "p_ge_mw", "i_crge_kcps", "delta_i_kcps", "eta"}, {}};
  json lv = json::array();
  for (const auto& l : levels) {
    for (std::size_t i = 0; i < l.delta_i.size(); ++i)
      t.rows.push_back({l.p_re, l.delta_i.x[i], l.i_re + l.delta_i.y[i], l.delta_i.y[i], l.eta[i]});
    lv.push_back({{"p_re_mw", l.p_re},
                  {"i_re_kcps", l.i_re},
                  {"delta_i_inf_kcps", l.fit.delta_i_inf},
                  {"p_sat_mw", l.fit.p_sat},
                  {"converged", l.fit.fit.converged},
                  {"poor_conditioning", l.fit.poor_conditioning}});
  }
  out.write_table(t, {{"command", "sweep-ge"}, {"mode", cfg.sweep_ge.mode}, {"levels", lv}});
  return kExitOk;
}

std::vector<double> default_c_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 40; ++i) g.push_back(0.15 * std::pow(500 / 0.15, i / 40.0));
  return g;
}

int cmd_sweep_conc(const RunConfig& cfg, Outputs& out) {
  const auto grid = cfg.sweep_conc.c_grid.empty() ? default_c_grid() : cfg.sweep_conc.c_grid;
  const auto rates = cfg.effective_rates();
  const ConcentrationTable tab = run_concentration_sweep(
      rates, grid, cfg.sweep_conc.excitation, cfg.sweep_conc.scaling, cfg.sweep_conc.sat_grid);
  Table t{{"ppm", "k23_0", "p_ns0", "eta", "i_re", "i_crge"}, {}};
  for (const auto& r : tab.rows) t.rows.push_back({r.ppm, r.k23_0, r.p_ns0, r.eta, r.i_re, r.i_crge});
  const EtaPeak peak = eta_concentration_peak(rates, cfg.sweep_conc.excitation, cfg.sweep_conc.scaling,
                                              grid.front(), grid.back());
  json summary = {{"command", "sweep-conc"},
                  {"peak_ppm", peak.ppm},
                  {"peak_eta", peak.eta},
                  {"eta_first", tab.rows.front().eta},
                  {"eta_last", tab.rows.back().eta}};
  out.write_table(t, summary);
  if (!tab.sat_grid.empty()) {
    Table s{{"ppm", "p_re_mw", "i_crge"}, {}};
    for (std::size_t r = 0; r < tab.rows.size(); ++r)
      for (std::size_t i = 0; i < tab.sat_grid.size(); ++i)
        s.rows.push_back({tab.rows[r].ppm, tab.sat_grid[i], tab.sat_curves[r][i]});
    out.write_extra_table(s, "saturation");
  }
  return kExitOk;
}

int cmd_trace(const RunConfig& cfg, Outputs& out) {
  CrgeTraceSpec spec = cfg.trace;
  spec.n_emitters = cfg.n_emitters;
  spec.method = cfg.method;
  const CrgeTraceResult r = run_crge_trace(cfg.effective_rates(), spec, cfg.detection, cfg.seed);
  Table t{{"time_ms", "counts", "segment", "p_ge_mw"}, {}};
  for (std::size_t i = 0; i < r.trace.counts.size(); ++i)
    t.rows.push_back({static_cast<double>(i) * r.trace.bin_width_ms,
                      static_cast<double>(r.trace.counts[i]), static_cast<double>(r.trace.segment[i]),
                      r.trace.segment[i] % 2 ? spec.p_ge : 0.0});
  json summary = {{"command", "trace"},      {"i_re_kcps", r.i_re},
                  {"i_crge_kcps", r.i_crge}, {"delta_i_kcps", r.delta_i},
                  {"eta", r.eta},            {"eta_stderr", r.eta_stderr},
                  {"eta_analytic", r.eta_analytic}};
  out.write_table(t, summary);
  return kExitOk;
}

int cmd_nn_dist(const RunConfig& cfg, Outputs& out) {
  const double rho = ppm_to_density(cfg.nn_dist.ppm);
  Table t{{"k", "mean_nm", "p5", "p95"}, {}};
  json mc = json::array();
  for (int k = 1; k <= cfg.nn_dist.k_max; ++k) {
    t.rows.push_back({static_cast<double>(k), mean_nn_distance(k, rho),
                      nn_distance_quantile(k, rho, 0.05), nn_distance_quantile(k, rho, 0.95)});
    const auto s = sample_nn_distances(rho, k, cfg.nn_dist.n_samples,
                                       derive_seed(cfg.seed, kSeedDonors, static_cast<std::uint64_t>(k)));
    double m = 0, m2 = 0;
    for (double v : s) {
      m += v;
      m2 += v * v;
    }
    const double n = static_cast<double>(s.size());
    m /= n;
    const double se = n > 1 ? std::sqrt(std::max(m2 / n - m * m, 0.0) / (n - 1)) : 0.0;
    mc.push_back({{"k", k}, {"mean_nm", m}, {"stderr_nm", se}, {"n_samples", s.size()}});
  }
  const double two = mean_distance_two_nearest(rho);
  const double r1 = mean_nn_distance(1, rho);
  json summary = {
      {"command", "nn-dist"},
      {"ppm", cfg.nn_dist.ppm},
      {"density_nm3", rho},
      {"mean_two_nearest_nm", two},
      {"monte_carlo", mc},
      {"comparison",
       {{"quoted_estimate_nm", 6.0},
        {"mean_first_nm", r1},
        {"mean_two_nearest_nm", two},
        {"note",
         "a ~6 nm estimate at 4 ppm matches E[r1] (" + format_number(r1) +
             " nm); the mean over the two nearest donors is " + format_number(two) + " nm"}}}};
  out.write_table(t, summary);
  return kExitOk;
}

int cmd_lifetime(const RunConfig& cfg, Outputs& out) {
  LifetimeSweepSpec spec = cfg.lifetime.spec;
  if (spec.wavelengths_nm.empty())
    for (int i = 0; i <= 22; ++i) spec.wavelengths_nm.push_back(540.0 + 5 * i);
  if (spec.knr_max == 0) spec.knr_max = knr_max_for_ratio(spec, 550, 640, 0.91);
  const auto rows = run_lifetime_sweep(spec, cfg.lifetime.pulse, cfg.lifetime.n_photons,
                                       derive_seed(cfg.seed, kSeedDecay, 1),
                                       cfg.lifetime.background_fraction);
  Table t{{"wavelength_nm", "energy_ev", "tau_true_ns", "tau_fit_ns", "tau_stderr_ns"}, {}};
  double steepest = 0, at_ev = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    t.rows.push_back({r.wavelength_nm, r.energy_ev, r.tau_true_ns, r.tau_fit_ns, r.tau_stderr_ns});
    if (i > 0) {
      const double s = std::abs((r.tau_fit_ns - rows[i - 1].tau_fit_ns) /
                                (r.energy_ev - rows[i - 1].energy_ev));
      if (s > steepest) {
        steepest = s;
        at_ev = 0.5 * (r.energy_ev + rows[i - 1].energy_ev);
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.wavelength_nm < b.wavelength_nm;
  });
  json summary = {{"command", "lifetime"},
                  {"knr_max_per_ns", spec.knr_max},
                  {"n_photons", cfg.lifetime.n_photons},
                  {"contrast_fit", 1 - lo->tau_fit_ns / hi->tau_fit_ns},
                  {"contrast_range_nm", {lo->wavelength_nm, hi->wavelength_nm}},
                  {"steepest_slope_ev", rows.size() > 1 ? json(at_ev) : json(nullptr)}};
  out.write_table(t, summary);
  return kExitOk;
}

json rates_report(const TransitionRatesd& r) {
  return {{"k21", r.k21},         {"k23_0", r.k23_0},     {"k31", r.k31},
          {"sigma_re", r.sigma_re}, {"sigma_ge", r.sigma_ge}, {"p_ns0", r.p_ns0},
          {"p_re_star", r.p_re_star}};
}

int cmd_calibrate(const RunConfig& cfg, Outputs& out) {
  const unsigned free = parse_free_fields(cfg.calibrate.free);
  const CalibrationResult c = calibrate(cfg.calibrate.targets, free, cfg.calibrate.start);
  const auto& o = c.observables;
  json report = {{"command", "calibrate"},
                 {"rates", rates_report(c.rates)},
                 {"observables",
                  {{"psat_re", o.psat_re},
                   {"psat_ge", o.psat_ge},
                   {"crge_gain", o.crge_gain},
                   {"ge_halfway_power", o.ge_halfway_power},
                   {"ge_re_ratio", o.ge_re_ratio},
                   {"eta_plateau_onset_mw", eta_plateau_onset(c.rates, cfg.calibrate.targets.halfway_p_re)}}},
                 {"non_identifiable", c.non_identifiable}};
  report.update(fit_json(c.fit, cfg.calibrate.free));
  bool converged = c.fit.converged;
  if (cfg.calibrate.concentration) {
    const ScalingCalibration s = calibrate_concentration_scaling(
        c.rates, cfg.sweep_conc.excitation, 4.0, 0.15, 0.10, cfg.sweep_conc.scaling);
    report["concentration_scaling"] = {{"kappa", s.scaling.kappa},
                                       {"p0", s.scaling.p0},
                                       {"peak_ppm", s.peak.ppm},
                                       {"peak_eta", s.peak.eta},
                                       {"converged", s.fit.converged}};
    converged = converged && s.fit.converged;
  }
  out.write_json(report);
  return converged ? kExitOk : kExitNotConverged;
}

using Command = int (*)(const RunConfig&, Outputs&);

struct CommandInfo {
  const char* name;
  const char* help;
  Command run;
};

constexpr CommandInfo kCommands[] = {
    {"simulate", "simulate a photon stream (PSTM1) or a binned trace", cmd_simulate},
    {"g2", "estimate g2 from a PSTM1 stream", cmd_g2},
    {"fit-sat", "fit the saturation law to a CSV series", cmd_fit_sat},
    {"fit-g2", "fit the g2 model to a CSV histogram", cmd_fit_g2},
    {"fit-decay", "fit a mono-exponential tail to a CSV decay histogram", cmd_fit_decay},
    {"sweep-ge", "GE power sweep at fixed RE levels", cmd_sweep_ge},
    {"sweep-conc", "enhancement factor versus nitrogen concentration", cmd_sweep_conc},
    {"trace", "toggled RE / CRGE time trace and enhancement factor", cmd_trace},
    {"nn-dist", "nearest-neighbor donor distances", cmd_nn_dist},
    {"lifetime", "fitted lifetime versus excitation wavelength", cmd_lifetime},
    {"calibrate", "fit rate constants to target observables", cmd_calibrate},
};

void report_error(std::ostream& err, const std::string& kind, const std::string& msg, int code) {
  err << json{{"error", kind}, {"message", msg}, {"exit_code", code}}.dump() << "\n";
}

void apply_input(RunConfig& cfg, const std::string& command, const std::string& input) {
  if (input.empty()) return;
  if (command == "g2") cfg.g2.input = input;
  else if (command == "fit-sat") cfg.fit_sat.input = input;
  else if (command == "fit-g2") cfg.fit_g2.input = input;
  else if (command == "fit-decay") cfg.fit_decay.input = input;
  else fail(Errc::kConfig, "--input is not used by '" + command + "'");
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Three-level SiV- photophysics simulator and fitting toolkit", "sivsim"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Overrides ov;
  std::vector<std::pair<CLI::App*, const CommandInfo*>> subs;
  for (const auto& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", ov.config, "JSON run config or manifest");
    sub->add_option("--seed", ov.seed, "master seed")->each([&](const std::string&) { ov.has_seed = true; });
    sub->add_option("--out", ov.out, "output directory");
    sub->add_option("--format", ov.format, "table format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--input", ov.input, "input file for g2 / fit-* commands");
    subs.emplace_back(sub, &c);
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (const auto& [sub, info] : subs)
      if (sub->parsed()) out << sub->help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "UsageError", e.what(), kExitConfig);
    return kExitConfig;
  }

  const CommandInfo* chosen = nullptr;
  for (const auto& [sub, info] : subs)
    if (sub->parsed()) chosen = info;
  if (!chosen) {
    report_error(err, "UsageError", "no subcommand given", kExitConfig);
    return kExitConfig;
  }

  try {
    RunConfig cfg = ov.config.empty() ? RunConfig{} : load_config_file(ov.config);
    if (ov.has_seed) cfg.seed = ov.seed;
    if (!ov.out.empty()) cfg.output_dir = ov.out;
    if (!ov.format.empty()) cfg.format = ov.format;
    apply_input(cfg, chosen->name, ov.input);
    if (cfg.timestamp.empty()) cfg.timestamp = utc_timestamp();
    // Round-trip the resolved config so the manifest reloads to the same run.
    cfg = config_from_json(config_to_json(cfg));

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    require(!ec, Errc::kIo, "cannot create output directory '" + cfg.output_dir + "'");

    Outputs outputs(cfg, chosen->name);
    const int code = chosen->run(cfg, outputs);
    json manifest = {{"tool_version", kToolVersion},
                     {"command", chosen->name},
                     {"seed", cfg.seed},
                     {"config", config_to_json(cfg)},
                     {"outputs", outputs.names()},
                     {"exit_code", code}};
    write_text_file((std::filesystem::path(cfg.output_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");
    if (code == kExitNotConverged)
      report_error(err, "FitNotConverged", std::string(chosen->name) + ": fit did not converge", code);
    return code;
  } catch (const Error& e) {
    const int code = e.code() == Errc::kConfig ? kExitConfig : kExitRuntime;
    report_error(err, to_string(e.code()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error(err, "RuntimeError", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace sivsim
