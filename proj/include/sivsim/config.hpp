#pragma once

// JSON run configuration. Every section is optional and falls back to the
// calibrated defaults; unknown keys are rejected at every depth.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sivsim/defaults.hpp"
#include "sivsim/fit.hpp"
#include "sivsim/mc.hpp"
#include "sivsim/protocols.hpp"

namespace sivsim {

inline constexpr const char* kToolVersion = "sivsim 0.1.0";

struct SimulateSection {
  std::string output = "stream";  // "stream" (PSTM1) or "trace" (CSV)
  double duration_s = 1;
  double bin_width_ms = 10;  // trace output
  ExcitationSchedule schedule;  // empty: one segment of `duration_s` at `excitation`
};

struct G2Section {
  std::string input;  // PSTM1 file
  double bin_width_ns = 0.5;
  double max_tau_ns = 200;
};

struct FitSatSection {
  std::string input;
  std::vector<std::string> columns{"power_mw", "counts_kcps"};
  int max_iter = 200;
};

struct FitG2Section {
  std::string input;
  std::string form = "full";  // "full" or "bunching_only"
  bool contrast = false;
  double min_abs_tau_ns = -1;
};

struct FitDecaySection {
  std::string input;
  std::vector<std::string> columns{"t_ns", "counts"};
  double irf_sigma_ps = 50;
  double t_start_ns = -1;  // negative: 3 IRF sigmas after the peak
  double t_end_ns = -1;    // negative: last bin
};

struct SweepGeSection {
  std::vector<double> p_re_levels{0.2, 5.1, 10.0};
  std::vector<double> p_ge_grid{0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0};
  std::string mode = "analytic";
  double time_per_point_s = 10;
};

struct SweepConcSection {
  std::vector<double> c_grid;  // empty: 41-point log grid 0.15-500 ppm
  Excitationd excitation = default_concentration_excitation();
  ConcentrationScaling<double> scaling = default_concentration_scaling();
  std::vector<double> sat_grid;
};

struct LifetimeSection {
  LifetimeSweepSpec spec;  // empty wavelengths: 540-650 nm in 5 nm steps
  PulseConfig pulse;
  std::uint64_t n_photons = 1000000;  // per wavelength
  double background_fraction = 0.01;
};

struct NnDistSection {
  double ppm = 4;
  int k_max = 2;
  std::uint64_t n_samples = 100000;
};

struct CalibrateSection {
  CalibrationTargets targets;
  std::vector<std::string> free{"k23_0", "sigma_re", "sigma_ge", "p_ns0"};
  TransitionRatesd start = calibration_start();
  bool concentration = true;  // also refit kappa, p0
};

struct RunConfig {
  TransitionRatesd rates = default_rates();
  double capture_factor = 1;  // multiplies k23_0
  DetectionConfig detection{};
  int n_emitters = 1;
  SimulationMethod method = SimulationMethod::kPhotonLumped;
  Excitationd excitation{10.0, 0.0};
  SimulateSection simulate;
  G2Section g2;
  FitSatSection fit_sat;
  FitG2Section fit_g2;
  FitDecaySection fit_decay;
  SweepGeSection sweep_ge;
  SweepConcSection sweep_conc;
  CrgeTraceSpec trace{};
  NnDistSection nn_dist;
  LifetimeSection lifetime;
  CalibrateSection calibrate;
  std::uint64_t seed = 1;
  std::string timestamp;  // empty: current UTC time at run start
  std::string format = "csv";
  std::string output_dir = ".";

  /// Rates with the capture factor applied.
  TransitionRatesd effective_rates() const;
};

/// Throws Error(kConfig) on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);

/// Accepts a plain config or a manifest (an object with "config" and
/// "tool_version" keys); returns the config in either case.
RunConfig load_config_file(const std::string& path);

unsigned parse_free_fields(const std::vector<std::string>& names);

}  // namespace sivsim
