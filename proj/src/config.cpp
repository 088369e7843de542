#include "sivsim/config.hpp"

#include <set>

#include "sivsim/io.hpp"

namespace sivsim {

using nlohmann::json;

TransitionRatesd RunConfig::effective_rates() const {
  return apply_capture_factor(rates, capture_factor);
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(Errc::kConfig, msg); }

// Reads keys out of one JSON object and complains about the ones left over.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_error("'" + where_ + "' must be an object");
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) config_error("unknown key '" + path(key) + "'");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) config_error("'" + path(key) + "' must be a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) config_error("'" + path(key) + "' must be an integer");
      out = v->get<int>();
    }
  }

  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) config_error("'" + path(key) + "' must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) config_error("'" + path(key) + "' must be true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) config_error("'" + path(key) + "' must be a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) config_error("'" + path(key) + "' must be an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) config_error("'" + path(key) + "' must be an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }

  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) config_error("'" + path(key) + "' must be an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) config_error("'" + path(key) + "' must be an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void one_of(const std::string& value, std::initializer_list<const char*> allowed,
            const std::string& where) {
  std::string list;
  for (const char* a : allowed) {
    if (value == a) return;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  config_error("'" + where + "' must be one of " + list + ", got '" + value + "'");
}

void read_excitation(Reader& parent, const std::string& key, Excitationd& e) {
  if (const json* v = parent.take(key)) {
    Reader r(*v, parent.path(key));
    r.get("p_re", e.p_re);
    r.get("p_ge", e.p_ge);
  }
}

json excitation_json(const Excitationd& e) { return {{"p_re", e.p_re}, {"p_ge", e.p_ge}}; }

void read_rates(const json& j, const std::string& where, TransitionRatesd& r) {
  Reader rd(j, where);
  rd.get("k21", r.k21);
  rd.get("k23_0", r.k23_0);
  rd.get("k31", r.k31);
  rd.get("sigma_re", r.sigma_re);
  rd.get("sigma_ge", r.sigma_ge);
  rd.get("p_ns0", r.p_ns0);
  rd.get("p_re_star", r.p_re_star);
}

json rates_json(const TransitionRatesd& r) {
  return {{"k21", r.k21},         {"k23_0", r.k23_0},     {"k31", r.k31},
          {"sigma_re", r.sigma_re}, {"sigma_ge", r.sigma_ge}, {"p_ns0", r.p_ns0},
          {"p_re_star", r.p_re_star}};
}

const char* method_name(SimulationMethod m) {
  return m == SimulationMethod::kPerTransition ? "per_transition" : "photon_lumped";
}

void check_values(const RunConfig& c) {
  validate(c.rates);
  require(std::isfinite(c.capture_factor) && c.capture_factor > 0, Errc::kInvalidArgument,
          "capture_factor must be > 0");
  validate(c.detection);
  validate(c.excitation);
  require(c.n_emitters >= 1, Errc::kInvalidArgument, "ensemble.n_emitters must be >= 1");
  require(c.simulate.duration_s > 0, Errc::kInvalidArgument, "simulate.duration_s must be > 0");
  require(c.simulate.bin_width_ms > 0, Errc::kInvalidArgument, "simulate.bin_width_ms must be > 0");
  for (const auto& s : c.simulate.schedule.segments) {
    require(s.duration_s > 0, Errc::kInvalidArgument, "schedule durations must be > 0");
    validate(s.exc);
  }
  require(c.g2.bin_width_ns > 0 && c.g2.max_tau_ns >= c.g2.bin_width_ns, Errc::kInvalidArgument,
          "g2 needs bin_width_ns > 0 and max_tau_ns >= bin_width_ns");
  require(c.fit_sat.columns.size() == 2 || c.fit_sat.columns.size() == 3, Errc::kInvalidArgument,
          "fit_sat.columns needs 2 or 3 names");
  require(c.fit_sat.max_iter >= 1, Errc::kInvalidArgument, "fit_sat.max_iter must be >= 1");
  require(c.fit_decay.columns.size() == 2, Errc::kInvalidArgument, "fit_decay.columns needs 2 names");
  require(c.fit_decay.irf_sigma_ps >= 0, Errc::kInvalidArgument, "fit_decay.irf_sigma_ps must be >= 0");
  require(!c.sweep_ge.p_re_levels.empty() && !c.sweep_ge.p_ge_grid.empty(), Errc::kInvalidArgument,
          "sweep_ge grids must be nonempty");
  require(c.sweep_ge.time_per_point_s > 0, Errc::kInvalidArgument,
          "sweep_ge.time_per_point_s must be > 0");
  for (double v : c.sweep_conc.c_grid)
    require(v > 0, Errc::kInvalidArgument, "sweep_conc.c_grid values must be > 0");
  validate(c.sweep_conc.excitation);
  require(c.sweep_conc.scaling.kappa > 0 && c.sweep_conc.scaling.p0 > 0, Errc::kInvalidArgument,
          "sweep_conc scaling constants must be > 0");
  require(c.trace.n_cycles >= 1 && c.trace.segment_s > 0 && c.trace.bin_width_ms > 0 &&
              c.trace.p_re > 0 && c.trace.p_ge >= 0,
          Errc::kInvalidArgument, "trace parameters out of range");
  require(c.nn_dist.ppm > 0 && c.nn_dist.k_max >= 1 && c.nn_dist.n_samples >= 1,
          Errc::kInvalidArgument, "nn_dist parameters out of range");
  if (!c.lifetime.spec.wavelengths_nm.empty()) validate(c.lifetime.spec);
  validate(c.lifetime.pulse);
  require(c.lifetime.n_photons >= 1, Errc::kInvalidArgument, "lifetime.n_photons must be >= 1");
  require(c.lifetime.background_fraction >= 0 && c.lifetime.background_fraction < 1,
          Errc::kInvalidArgument, "lifetime.background_fraction must be in [0, 1)");
  validate(c.calibrate.targets);
  validate(c.calibrate.start);
  parse_free_fields(c.calibrate.free);
}

}  // namespace

unsigned parse_free_fields(const std::vector<std::string>& names) {
  unsigned mask = 0;
  for (const auto& n : names) {
    if (n == "k21") mask |= kFieldK21;
    else if (n == "k23_0") mask |= kFieldK23_0;
    else if (n == "k31") mask |= kFieldK31;
    else if (n == "sigma_re") mask |= kFieldSigmaRe;
    else if (n == "sigma_ge") mask |= kFieldSigmaGe;
    else if (n == "p_ns0") mask |= kFieldPNs0;
    else if (n == "p_re_star") mask |= kFieldPReStar;
    else fail(Errc::kConfig, "unknown rate field '" + n + "' in calibrate.free");
  }
  require(mask != 0, Errc::kConfig, "calibrate.free is empty");
  return mask;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  {
    Reader top(j, "");
    if (const json* v = top.take("rates")) read_rates(*v, "rates", c.rates);
    top.get("capture_factor", c.capture_factor);
    if (const json* v = top.take("detection")) {
      Reader r(*v, "detection");
      r.get("efficiency", c.detection.efficiency);
      r.get("background_rate", c.detection.background_rate);
      r.get("split_ratio", c.detection.split_ratio);
      r.get("jitter_sigma_ps", c.detection.jitter_sigma_ps);
      r.get("dead_time_ps", c.detection.dead_time_ps);
      std::uint64_t max_records = c.detection.max_records;
      r.get("max_records", max_records);
      c.detection.max_records = static_cast<std::size_t>(max_records);
    }
    if (const json* v = top.take("ensemble")) {
      Reader r(*v, "ensemble");
      r.get("n_emitters", c.n_emitters);
      std::string m = method_name(c.method);
      r.get("method", m);
      one_of(m, {"photon_lumped", "per_transition"}, "ensemble.method");
      c.method = m == "per_transition" ? SimulationMethod::kPerTransition
                                       : SimulationMethod::kPhotonLumped;
    }
    read_excitation(top, "excitation", c.excitation);
    if (const json* v = top.take("simulate")) {
      Reader r(*v, "simulate");
      r.get("output", c.simulate.output);
      one_of(c.simulate.output, {"stream", "trace"}, "simulate.output");
      r.get("duration_s", c.simulate.duration_s);
      r.get("bin_width_ms", c.simulate.bin_width_ms);
      if (const json* s = r.take("schedule")) {
        if (!s->is_array()) config_error("'simulate.schedule' must be an array");
        for (std::size_t i = 0; i < s->size(); ++i) {
          Reader seg((*s)[i], "simulate.schedule[" + std::to_string(i) + "]");
          ScheduleSegment g{0, {}};
          seg.get("duration_s", g.duration_s);
          seg.get("p_re", g.exc.p_re);
          seg.get("p_ge", g.exc.p_ge);
          c.simulate.schedule.segments.push_back(g);
        }
      }
    }
    if (const json* v = top.take("g2")) {
      Reader r(*v, "g2");
      r.get("input", c.g2.input);
      r.get("bin_width_ns", c.g2.bin_width_ns);
      r.get("max_tau_ns", c.g2.max_tau_ns);
    }
    if (const json* v = top.take("fit_sat")) {
      Reader r(*v, "fit_sat");
      r.get("input", c.fit_sat.input);
      r.get("columns", c.fit_sat.columns);
      r.get("max_iter", c.fit_sat.max_iter);
    }
    if (const json* v = top.take("fit_g2")) {
      Reader r(*v, "fit_g2");
      r.get("input", c.fit_g2.input);
      r.get("form", c.fit_g2.form);
      one_of(c.fit_g2.form, {"full", "bunching_only"}, "fit_g2.form");
      r.get("contrast", c.fit_g2.contrast);
      r.get("min_abs_tau_ns", c.fit_g2.min_abs_tau_ns);
    }
    if (const json* v = top.take("fit_decay")) {
      Reader r(*v, "fit_decay");
      r.get("input", c.fit_decay.input);
      r.get("columns", c.fit_decay.columns);
      r.get("irf_sigma_ps", c.fit_decay.irf_sigma_ps);
      r.get("t_start_ns", c.fit_decay.t_start_ns);
      r.get("t_end_ns", c.fit_decay.t_end_ns);
    }
    if (const json* v = top.take("sweep_ge")) {
      Reader r(*v, "sweep_ge");
      r.get("p_re_levels", c.sweep_ge.p_re_levels);
      r.get("p_ge_grid", c.sweep_ge.p_ge_grid);
      r.get("mode", c.sweep_ge.mode);
      one_of(c.sweep_ge.mode, {"analytic", "monte_carlo"}, "sweep_ge.mode");
      r.get("time_per_point_s", c.sweep_ge.time_per_point_s);
    }
    if (const json* v = top.take("sweep_conc")) {
      Reader r(*v, "sweep_conc");
      r.get("c_grid", c.sweep_conc.c_grid);
      read_excitation(r, "excitation", c.sweep_conc.excitation);
      r.get("kappa", c.sweep_conc.scaling.kappa);
      r.get("p0", c.sweep_conc.scaling.p0);
      r.get("sat_grid", c.sweep_conc.sat_grid);
    }
    if (const json* v = top.take("trace")) {
      Reader r(*v, "trace");
      r.get("p_re", c.trace.p_re);
      r.get("p_ge", c.trace.p_ge);
      r.get("segment_s", c.trace.segment_s);
      r.get("n_cycles", c.trace.n_cycles);
      r.get("bin_width_ms", c.trace.bin_width_ms);
    }
    if (const json* v = top.take("lifetime")) {
      Reader r(*v, "lifetime");
      auto& s = c.lifetime;
      r.get("wavelengths_nm", s.spec.wavelengths_nm);
      r.get("e_th_ev", s.spec.e_th_ev);
      r.get("width_ev", s.spec.width_ev);
      r.get("knr_max", s.spec.knr_max);
      r.get("k_r", s.spec.k_r);
      r.get("n_photons", s.n_photons);
      r.get("background_fraction", s.background_fraction);
      r.get("rep_rate_mhz", s.pulse.rep_rate_mhz);
      r.get("pulse_energy_scale", s.pulse.pulse_energy_scale);
      r.get("irf_sigma_ps", s.pulse.irf_sigma_ps);
      r.get("window_ns", s.pulse.window_ns);
      r.get("pulse_offset_ns", s.pulse.pulse_offset_ns);
    }
    if (const json* v = top.take("nn_dist")) {
      Reader r(*v, "nn_dist");
      r.get("ppm", c.nn_dist.ppm);
      r.get("k_max", c.nn_dist.k_max);
      r.get("n_samples", c.nn_dist.n_samples);
    }
    if (const json* v = top.take("calibrate")) {
      Reader r(*v, "calibrate");
      if (const json* t = r.take("targets")) {
        Reader tr(*t, "calibrate.targets");
        auto& tg = c.calibrate.targets;
        tr.get("psat_re", tg.psat_re);
        tr.get("psat_ge", tg.psat_ge);
        tr.get("crge_gain", tg.crge_gain);
        tr.get("ge_halfway_power", tg.ge_halfway_power);
        if (const json* q = tr.take("ge_re_ratio")) {
          if (q->is_null()) tg.ge_re_ratio.reset();
          else if (q->is_number()) tg.ge_re_ratio = q->get<double>();
          else config_error("'calibrate.targets.ge_re_ratio' must be a number or null");
        }
        tr.get("gain_p_ge", tg.gain_p_ge);
        tr.get("halfway_p_re", tg.halfway_p_re);
        if (const json* w = tr.take("weights")) {
          Reader wr(*w, "calibrate.targets.weights");
          wr.get("psat_re", tg.w_psat_re);
          wr.get("psat_ge", tg.w_psat_ge);
          wr.get("crge_gain", tg.w_gain);
          wr.get("ge_halfway_power", tg.w_halfway);
          wr.get("ge_re_ratio", tg.w_ratio);
        }
      }
      r.get("free", c.calibrate.free);
      if (const json* s = r.take("start")) read_rates(*s, "calibrate.start", c.calibrate.start);
      r.get("concentration", c.calibrate.concentration);
    }
    top.get("seed", c.seed);
    top.get("timestamp", c.timestamp);
    top.get("format", c.format);
    one_of(c.format, {"csv", "json"}, "format");
    top.get("output_dir", c.output_dir);
  }
  try {
    check_values(c);
  } catch (const Error& e) {
    if (e.code() == Errc::kConfig) throw;
    config_error(e.what());
  }
  return c;
}

json config_to_json(const RunConfig& c) {
  json schedule = json::array();
  for (const auto& s : c.simulate.schedule.segments)
    schedule.push_back({{"duration_s", s.duration_s}, {"p_re", s.exc.p_re}, {"p_ge", s.exc.p_ge}});
  const auto& tg = c.calibrate.targets;
  json ratio = tg.ge_re_ratio ? json(*tg.ge_re_ratio) : json(nullptr);
  return {
      {"rates", rates_json(c.rates)},
      {"capture_factor", c.capture_factor},
      {"detection",
       {{"efficiency", c.detection.efficiency},
        {"background_rate", c.detection.background_rate},
        {"split_ratio", c.detection.split_ratio},
        {"jitter_sigma_ps", c.detection.jitter_sigma_ps},
        {"dead_time_ps", c.detection.dead_time_ps},
        {"max_records", static_cast<std::uint64_t>(c.detection.max_records)}}},
      {"ensemble", {{"n_emitters", c.n_emitters}, {"method", method_name(c.method)}}},
      {"excitation", excitation_json(c.excitation)},
      {"simulate",
       {{"output", c.simulate.output},
        {"duration_s", c.simulate.duration_s},
        {"bin_width_ms", c.simulate.bin_width_ms},
        {"schedule", schedule}}},
      {"g2",
       {{"input", c.g2.input}, {"bin_width_ns", c.g2.bin_width_ns}, {"max_tau_ns", c.g2.max_tau_ns}}},
      {"fit_sat",
       {{"input", c.fit_sat.input},
        {"columns", c.fit_sat.columns},
        {"max_iter", c.fit_sat.max_iter}}},
      {"fit_g2",
       {{"input", c.fit_g2.input},
        {"form", c.fit_g2.form},
        {"contrast", c.fit_g2.contrast},
        {"min_abs_tau_ns", c.fit_g2.min_abs_tau_ns}}},
      {"fit_decay",
       {{"input", c.fit_decay.input},
        {"columns", c.fit_decay.columns},
        {"irf_sigma_ps", c.fit_decay.irf_sigma_ps},
        {"t_start_ns", c.fit_decay.t_start_ns},
        {"t_end_ns", c.fit_decay.t_end_ns}}},
      {"sweep_ge",
       {{"p_re_levels", c.sweep_ge.p_re_levels},
        {"p_ge_grid", c.sweep_ge.p_ge_grid},
        {"mode", c.sweep_ge.mode},
        {"time_per_point_s", c.sweep_ge.time_per_point_s}}},
      {"sweep_conc",
       {{"c_grid", c.sweep_conc.c_grid},
        {"excitation", excitation_json(c.sweep_conc.excitation)},
        {"kappa", c.sweep_conc.scaling.kappa},
        {"p0", c.sweep_conc.scaling.p0},
        {"sat_grid", c.sweep_conc.sat_grid}}},
      {"trace",
       {{"p_re", c.trace.p_re},
        {"p_ge", c.trace.p_ge},
        {"segment_s", c.trace.segment_s},
        {"n_cycles", c.trace.n_cycles},
        {"bin_width_ms", c.trace.bin_width_ms}}},
      {"lifetime",
       {{"wavelengths_nm", c.lifetime.spec.wavelengths_nm},
        {"e_th_ev", c.lifetime.spec.e_th_ev},
        {"width_ev", c.lifetime.spec.width_ev},
        {"knr_max", c.lifetime.spec.knr_max},
        {"k_r", c.lifetime.spec.k_r},
        {"n_photons", c.lifetime.n_photons},
        {"background_fraction", c.lifetime.background_fraction},
        {"rep_rate_mhz", c.lifetime.pulse.rep_rate_mhz},
        {"pulse_energy_scale", c.lifetime.pulse.pulse_energy_scale},
        {"irf_sigma_ps", c.lifetime.pulse.irf_sigma_ps},
        {"window_ns", c.lifetime.pulse.window_ns},
        {"pulse_offset_ns", c.lifetime.pulse.pulse_offset_ns}}},
      {"nn_dist", {{"ppm", c.nn_dist.ppm}, {"k_max", c.nn_dist.k_max}, {"n_samples", c.nn_dist.n_samples}}},
      {"calibrate",
       {{"targets",
         {{"psat_re", tg.psat_re},
          {"psat_ge", tg.psat_ge},
          {"crge_gain", tg.crge_gain},
          {"ge_halfway_power", tg.ge_halfway_power},
          {"ge_re_ratio", ratio},
          {"gain_p_ge", tg.gain_p_ge},
          {"halfway_p_re", tg.halfway_p_re},
          {"weights",
           {{"psat_re", tg.w_psat_re},
            {"psat_ge", tg.w_psat_ge},
            {"crge_gain", tg.w_gain},
            {"ge_halfway_power", tg.w_halfway},
            {"ge_re_ratio", tg.w_ratio}}}}},
        {"free", c.calibrate.free},
        {"start", rates_json(c.calibrate.start)},
        {"concentration", c.calibrate.concentration}}},
      {"seed", c.seed},
      {"timestamp", c.timestamp},
      {"format", c.format},
      {"output_dir", c.output_dir},
  };
}

RunConfig load_config_file(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    fail(Errc::kConfig, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::kConfig, "'" + path + "' is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("tool_version")) return config_from_json(j["config"]);
  return config_from_json(j);
}

}  // namespace sivsim
